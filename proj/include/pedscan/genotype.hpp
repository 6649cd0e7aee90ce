#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pedscan/common.hpp"
#include "pedscan/pedigree.hpp"

namespace pedscan {

struct SnpInfo {
  std::string name;
  std::string chromosome;
  long long base_pair = 0;
  std::string allele1;  // the counted allele
  std::string allele2;
  bool is_x_linked = false;
  double cm = 0.0;
};

// SNP-major, 2-bit packed additive codes. Stored bytes are the raw bed
// encoding (00=2 copies of allele1, 10=1, 11=0, 01=missing), so a round trip
// through write_bed/read_bed is bit-exact.
class GenotypeMatrix {
 public:
  static constexpr std::uint8_t kMissing = 3;

  GenotypeMatrix() = default;
  GenotypeMatrix(std::vector<SnpInfo> snps, size_t n_individuals)
      : snps_(std::move(snps)),
        n_(n_individuals),
        bytes_per_snp_((n_individuals + 3) / 4),
        packed_(snps_.size() * bytes_per_snp_, 0x55) {}  // 0b01 pattern = all missing

  size_t n_individuals() const { return n_; }
  size_t n_snps() const { return snps_.size(); }
  const std::vector<SnpInfo>& snps() const { return snps_; }
  std::vector<SnpInfo>& snps() { return snps_; }

  std::vector<std::string>& individual_ids() { return ids_; }
  const std::vector<std::string>& individual_ids() const { return ids_; }
  std::vector<std::string>& family_ids() { return fids_; }
  const std::vector<std::string>& family_ids() const { return fids_; }
  std::vector<int>& fam_sex() { return fam_sex_; }
  const std::vector<int>& fam_sex() const { return fam_sex_; }

  // Decoded additive code: 0, 1, 2 copies of allele1, or kMissing.
  std::uint8_t code(size_t snp, size_t ind) const {
    const std::uint8_t raw =
        (packed_[snp * bytes_per_snp_ + ind / 4] >> (2 * (ind % 4))) & 0x3u;
    return decode_table_[raw];
  }

  void set_code(size_t snp, size_t ind, std::uint8_t code) {
    const std::uint8_t raw = encode_table_[code & 0x3u];
    std::uint8_t& b = packed_[snp * bytes_per_snp_ + ind / 4];
    const int shift = 2 * static_cast<int>(ind % 4);
    b = static_cast<std::uint8_t>((b & ~(0x3u << shift)) | (raw << shift));
  }

  void decode_snp(size_t snp, std::uint8_t* out) const {
    const std::uint8_t* row = packed_.data() + snp * bytes_per_snp_;
    for (size_t i = 0; i < n_; ++i)
      out[i] = decode_table_[(row[i / 4] >> (2 * (i % 4))) & 0x3u];
  }

  size_t count_missing_in_snp(size_t snp) const {
    const std::uint8_t* row = packed_.data() + snp * bytes_per_snp_;
    size_t miss = 0;
    for (size_t i = 0; i < n_; ++i)
      if (((row[i / 4] >> (2 * (i % 4))) & 0x3u) == 0x1u) ++miss;
    return miss;
  }

  GenotypeMatrix subset(const std::vector<size_t>& snp_keep,
                        const std::vector<size_t>& ind_keep) const {
    std::vector<SnpInfo> info;
    info.reserve(snp_keep.size());
    for (size_t s : snp_keep) info.push_back(snps_[s]);
    GenotypeMatrix out(std::move(info), ind_keep.size());
    for (size_t k = 0; k < ind_keep.size(); ++k) {
      if (!ids_.empty()) out.ids_.push_back(ids_[ind_keep[k]]);
      if (!fids_.empty()) out.fids_.push_back(fids_[ind_keep[k]]);
      if (!fam_sex_.empty()) out.fam_sex_.push_back(fam_sex_[ind_keep[k]]);
    }
    for (size_t j = 0; j < snp_keep.size(); ++j)
      for (size_t k = 0; k < ind_keep.size(); ++k)
        out.set_code(j, k, code(snp_keep[j], ind_keep[k]));
    return out;
  }

  static GenotypeMatrix read_bed(const std::string& bed_path, const std::string& bim_path,
                                 const std::string& fam_path);
  void write_bed(const std::string& prefix) const;

 private:
  static constexpr std::uint8_t decode_table_[4] = {2, kMissing, 1, 0};
  static constexpr std::uint8_t encode_table_[4] = {0x3, 0x2, 0x0, 0x1};

  std::vector<SnpInfo> snps_;
  size_t n_ = 0;
  size_t bytes_per_snp_ = 0;
  std::vector<std::uint8_t> packed_;
  std::vector<std::string> ids_;   // fam IID order
  std::vector<std::string> fids_;  // fam FID column
  std::vector<int> fam_sex_;       // fam sex column as coded (1/2/0)
};

inline bool chromosome_is_x(const std::string& chrom) {
  const std::string c = to_lower(chrom);
  return c == "x" || c == "23" || c == "chrx";
}

inline GenotypeMatrix GenotypeMatrix::read_bed(const std::string& bed_path,
                                               const std::string& bim_path,
                                               const std::string& fam_path) {
  std::vector<std::string> iids, fids;
  std::vector<int> sexes;
  {
    std::ifstream fam(fam_path);
    if (!fam) throw data_error("cannot open fam file: " + fam_path);
    std::string line;
    while (std::getline(fam, line)) {
      if (trim(line).empty()) continue;
      std::istringstream ss(line);
      std::string fid, iid, pat, mat, sex, pheno;
      if (!(ss >> fid >> iid >> pat >> mat >> sex)) throw data_error("malformed fam line: " + line);
      fids.push_back(fid);
      iids.push_back(iid);
      long long s = 0;
      parse_long(sex, s);
      sexes.push_back(static_cast<int>(s));
    }
  }
  if (iids.empty()) throw data_error("fam file has no individuals: " + fam_path);
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : iids)
      if (!seen.insert(id).second) throw data_error("duplicate individual id in fam file: " + id);
  }

  std::vector<SnpInfo> snps;
  {
    std::ifstream bim(bim_path);
    if (!bim) throw data_error("cannot open bim file: " + bim_path);
    std::string line;
    std::unordered_set<std::string> names;
    while (std::getline(bim, line)) {
      if (trim(line).empty()) continue;
      std::istringstream ss(line);
      SnpInfo s;
      std::string bp;
      if (!(ss >> s.chromosome >> s.name >> s.cm >> bp >> s.allele1 >> s.allele2))
        throw data_error("malformed bim line: " + line);
      if (!parse_long(bp, s.base_pair) || s.base_pair <= 0)
        throw data_error("bim base-pair position must be a positive integer: " + line);
      if (!names.insert(s.name).second) throw data_error("duplicate SNP name in bim file: " + s.name);
      s.is_x_linked = chromosome_is_x(s.chromosome);
      snps.push_back(std::move(s));
    }
  }

  std::ifstream bed(bed_path, std::ios::binary);
  if (!bed) throw data_error("cannot open bed file: " + bed_path);
  char magic[3] = {0, 0, 0};
  bed.read(magic, 3);
  if (bed.gcount() != 3 || magic[0] != 0x6c || magic[1] != 0x1b)
    throw data_error("bed file has wrong magic bytes: " + bed_path);
  if (magic[2] != 0x01)
    throw data_error("bed file is not SNP-major (unsupported orientation): " + bed_path);

  GenotypeMatrix g(std::move(snps), iids.size());
  g.ids_ = std::move(iids);
  g.fids_ = std::move(fids);
  g.fam_sex_ = std::move(sexes);
  const std::streamsize expect = static_cast<std::streamsize>(g.packed_.size());
  bed.read(reinterpret_cast<char*>(g.packed_.data()), expect);
  if (bed.gcount() != expect)
    throw data_error("bed payload truncated: expected " + std::to_string(expect) +
                     " bytes in " + bed_path);
  char extra;
  if (bed.read(&extra, 1), bed.gcount() != 0)
    throw data_error("bed payload longer than bim/fam imply: " + bed_path);
  return g;
}

inline void GenotypeMatrix::write_bed(const std::string& prefix) const {
  {
    std::ofstream bed(prefix + ".bed", std::ios::binary);
    if (!bed) throw data_error("cannot open output file: " + prefix + ".bed");
    const char magic[3] = {0x6c, 0x1b, 0x01};
    bed.write(magic, 3);
    bed.write(reinterpret_cast<const char*>(packed_.data()),
              static_cast<std::streamsize>(packed_.size()));
  }
  {
    auto bim = open_output(prefix + ".bim");
    for (const auto& s : snps_)
      bim << s.chromosome << '\t' << s.name << '\t' << format_g(s.cm) << '\t' << s.base_pair
          << '\t' << s.allele1 << '\t' << s.allele2 << '\n';
  }
  {
    auto fam = open_output(prefix + ".fam");
    for (size_t i = 0; i < n_; ++i) {
      const std::string fid = i < fids_.size() ? fids_[i] : "0";
      const int sex = i < fam_sex_.size() ? fam_sex_[i] : 0;
      fam << fid << '\t' << ids_[i] << "\t0\t0\t" << sex << "\t-9\n";
    }
  }
}

}  // namespace pedscan
