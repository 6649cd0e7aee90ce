#pragma once

#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pedscan/common.hpp"

namespace pedscan {

enum class Sex { male, female };

inline Sex parse_sex(const std::string& token, const std::string& person) {
  const std::string t = to_lower(trim(token));
  if (t == "m" || t == "male" || t == "1") return Sex::male;
  if (t == "f" || t == "female" || t == "2") return Sex::female;
  throw data_error("unknown sex '" + token + "' for person " + person);
}

struct PersonRecord {
  std::string id;
  int father = -1;  // index into Pedigree::members, -1 = founder
  int mother = -1;
  Sex sex = Sex::male;
  std::string household;  // empty = shares a household with no one
};

// Members are stored in topological order: parents precede children.
struct Pedigree {
  std::string id;
  std::vector<PersonRecord> members;
  std::vector<int> founders;

  bool is_founder(int i) const { return members[i].father < 0; }
  int size() const { return static_cast<int>(members.size()); }
};

namespace detail {

struct RawPerson {
  std::string ped_id, id, father, mother, household;
  Sex sex;
  size_t line_no;
};

// Kahn topological sort over parent->child edges; input order breaks ties so
// the result is a deterministic function of the file.
inline std::vector<int> topological_order(const std::vector<RawPerson>& people,
                                          const std::vector<int>& father_of,
                                          const std::vector<int>& mother_of,
                                          const std::vector<int>& group) {
  const int n = static_cast<int>(people.size());
  std::vector<int> indeg(n, 0);
  std::vector<std::vector<int>> children(n);
  for (int i = 0; i < n; ++i) {
    for (int p : {father_of[i], mother_of[i]}) {
      if (p >= 0) {
        children[p].push_back(i);
        ++indeg[i];
      }
    }
  }
  std::vector<int> order;
  order.reserve(n);
  std::deque<int> ready;
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    int u = ready.front();
    ready.pop_front();
    order.push_back(u);
    for (int c : children[u])
      if (--indeg[c] == 0) ready.push_back(c);
  }
  if (static_cast<int>(order.size()) != n) {
    std::vector<std::string> cycle;
    for (int i = 0; i < n; ++i)
      if (indeg[i] > 0) cycle.push_back(people[group[i]].id);
    throw data_error("pedigree contains a parent-child cycle involving: " +
                     join(cycle, ", "));
  }
  return order;
}

}  // namespace detail

// CSV with header PedigreeID,PersonID,Father,Mother,Sex,Household.
// Empty or "0" parent fields mean founder. Each PedigreeID group is split
// into connected components so unrelated individuals become singleton
// pedigrees; split groups get ":<k>" suffixes.
inline std::vector<Pedigree> read_pedigree_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open pedigree file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw data_error("empty pedigree file: " + path);
  auto header = split_trimmed(line, ',');
  std::map<std::string, int> col;
  for (size_t i = 0; i < header.size(); ++i) col[to_lower(header[i])] = static_cast<int>(i);
  for (const char* required : {"pedigreeid", "personid", "father", "mother", "sex", "household"}) {
    if (!col.count(required))
      throw data_error(std::string("pedigree file missing column ") + required);
  }

  std::vector<detail::RawPerson> raw;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_trimmed(line, ',');
    if (f.size() < header.size())
      throw data_error("pedigree file line " + std::to_string(line_no) + ": too few fields");
    detail::RawPerson p;
    p.ped_id = f[col["pedigreeid"]];
    p.id = f[col["personid"]];
    p.father = f[col["father"]];
    p.mother = f[col["mother"]];
    p.household = f[col["household"]];
    p.sex = parse_sex(f[col["sex"]], p.id);
    p.line_no = line_no;
    if (p.father == "0") p.father.clear();
    if (p.mother == "0") p.mother.clear();
    raw.push_back(std::move(p));
  }
  if (raw.empty()) throw data_error("pedigree file has no data rows: " + path);

  std::unordered_map<std::string, int> index_of;
  for (size_t i = 0; i < raw.size(); ++i) {
    if (!index_of.emplace(raw[i].id, static_cast<int>(i)).second)
      throw data_error("duplicate person id in pedigree file: " + raw[i].id);
  }

  // Resolve parents; both present or both absent.
  const int n = static_cast<int>(raw.size());
  std::vector<int> father_of(n, -1), mother_of(n, -1);
  for (int i = 0; i < n; ++i) {
    const auto& p = raw[i];
    if (p.father.empty() != p.mother.empty())
      throw data_error("person " + p.id + " has exactly one parent recorded; both or neither required");
    if (p.father.empty()) continue;
    for (int which = 0; which < 2; ++which) {
      const std::string& pid = which == 0 ? p.father : p.mother;
      auto it = index_of.find(pid);
      if (it == index_of.end())
        throw data_error("person " + p.id + " references missing parent " + pid);
      const auto& parent = raw[it->second];
      if (parent.ped_id != p.ped_id)
        throw data_error("person " + p.id + " references parent " + pid + " in a different pedigree");
      if (which == 0 && parent.sex != Sex::male)
        throw data_error("person " + pid + " is named as father of " + p.id + " but recorded female");
      if (which == 1 && parent.sex != Sex::female)
        throw data_error("person " + pid + " is named as mother of " + p.id + " but recorded male");
      (which == 0 ? father_of[i] : mother_of[i]) = it->second;
    }
  }

  // Connected components within each PedigreeID group (undirected parent edges).
  std::vector<int> comp(n, -1);
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i) {
    for (int p : {father_of[i], mother_of[i]}) {
      if (p >= 0) {
        adj[i].push_back(p);
        adj[p].push_back(i);
      }
    }
  }
  int n_comp = 0;
  for (int i = 0; i < n; ++i) {
    if (comp[i] >= 0) continue;
    std::deque<int> stack{i};
    comp[i] = n_comp;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : adj[u])
        if (comp[v] < 0) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
    }
    ++n_comp;
  }

  // Group members by component, preserving file order of first appearance.
  std::vector<std::vector<int>> comp_members(n_comp);
  std::vector<int> comp_order;
  std::vector<bool> seen(n_comp, false);
  for (int i = 0; i < n; ++i) {
    if (!seen[comp[i]]) {
      seen[comp[i]] = true;
      comp_order.push_back(comp[i]);
    }
    comp_members[comp[i]].push_back(i);
  }

  std::map<std::string, int> comps_in_group;
  for (int c = 0; c < n_comp; ++c) comps_in_group[raw[comp_members[c][0]].ped_id]++;

  std::vector<Pedigree> out;
  std::map<std::string, int> suffix_counter;
  for (int c : comp_order) {
    const auto& members = comp_members[c];
    const std::string group = raw[members[0]].ped_id;

    // Local reindex, then topological order within the component.
    std::unordered_map<int, int> local;
    for (size_t k = 0; k < members.size(); ++k) local[members[k]] = static_cast<int>(k);
    std::vector<detail::RawPerson> people;
    std::vector<int> fa(members.size(), -1), mo(members.size(), -1), back(members.size());
    for (size_t k = 0; k < members.size(); ++k) {
      people.push_back(raw[members[k]]);
      back[k] = static_cast<int>(k);
      if (father_of[members[k]] >= 0) fa[k] = local[father_of[members[k]]];
      if (mother_of[members[k]] >= 0) mo[k] = local[mother_of[members[k]]];
    }
    auto order = detail::topological_order(people, fa, mo, back);

    Pedigree ped;
    ped.id = group;
    if (comps_in_group[group] > 1) ped.id += ":" + std::to_string(++suffix_counter[group]);
    std::vector<int> pos(order.size());
    for (size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<int>(k);
    for (int src : order) {
      PersonRecord rec;
      rec.id = people[src].id;
      rec.sex = people[src].sex;
      rec.household = people[src].household;
      rec.father = fa[src] >= 0 ? pos[fa[src]] : -1;
      rec.mother = mo[src] >= 0 ? pos[mo[src]] : -1;
      if (rec.father < 0) ped.founders.push_back(static_cast<int>(ped.members.size()));
      ped.members.push_back(std::move(rec));
    }
    out.push_back(std::move(ped));
  }
  return out;
}

inline void write_pedigree_csv(const std::string& path, const std::vector<Pedigree>& peds) {
  auto out = open_output(path);
  out << "PedigreeID,PersonID,Father,Mother,Sex,Household\n";
  for (const auto& ped : peds) {
    for (const auto& m : ped.members) {
      out << ped.id << ',' << m.id << ','
          << (m.father >= 0 ? ped.members[m.father].id : "") << ','
          << (m.mother >= 0 ? ped.members[m.mother].id : "") << ','
          << (m.sex == Sex::male ? 'M' : 'F') << ',' << m.household << '\n';
    }
  }
}

}  // namespace pedscan
