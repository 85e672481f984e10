// SPDX-License-Identifier: Apache-2.0
#include "glag/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "glag/error.hpp"

namespace glag {

static_assert(std::endian::native == std::endian::little,
              "embedding I/O assumes a little-endian host");

std::vector<int> EmbeddingDataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels)
    if (y >= 0 && y < num_classes) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

void EmbeddingDataset::validate() const {
  GLAG_EXPECT(num_classes >= 1, "dataset must have at least one class");
  GLAG_EXPECT(features.rows() == labels.size(), "feature rows must match label count");
  for (int y : labels)
    GLAG_EXPECT(y >= 0 && y < num_classes, "label out of range: " + std::to_string(y));
  GLAG_EXPECT(features.all_finite(), "dataset has non-finite features");
}

std::vector<int> canonicalize(EmbeddingDataset& ds) {
  const auto counts = ds.class_counts();
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return counts[a] > counts[b]; });
  std::vector<int> remap(counts.size());
  for (std::size_t new_id = 0; new_id < order.size(); ++new_id)
    remap[static_cast<std::size_t>(order[new_id])] = static_cast<int>(new_id);
  for (int& y : ds.labels) y = remap[static_cast<std::size_t>(y)];
  return remap;
}

std::vector<int> make_longtail_counts(const LongTailSpec& spec) {
  GLAG_EXPECT(spec.num_classes >= 1, "need at least one class");
  GLAG_EXPECT(spec.imbalance >= 1.0, "imbalance ratio must be >= 1");
  GLAG_EXPECT(spec.largest >= spec.imbalance, "largest class must be >= imbalance ratio");
  GLAG_EXPECT(!(spec.num_classes < 2 && spec.imbalance > 1.0),
              "an imbalance ratio needs at least two classes");
  std::vector<int> counts(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    const double frac = spec.num_classes > 1 ? double(k) / (spec.num_classes - 1) : 0.0;
    counts[static_cast<std::size_t>(k)] =
        static_cast<int>(std::lround(spec.largest * std::pow(spec.imbalance, -frac)));
  }
  return counts;
}

Vector class_priors(std::span<const int> counts) {
  GLAG_EXPECT(!counts.empty(), "priors of an empty count vector");
  double total = 0.0;
  for (int c : counts) {
    GLAG_EXPECT(c >= 1, "every class needs at least one sample to have a prior");
    total += c;
  }
  Vector p(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) p[k] = counts[k] / total;
  return p;
}

const char* group_name(Group g) {
  switch (g) {
    case Group::Many: return "many";
    case Group::Medium: return "medium";
    case Group::Few: return "few";
  }
  return "?";
}

GroupAssignment assign_groups(std::span<const int> counts, int many_min, int few_max) {
  GLAG_EXPECT(few_max <= many_min, "few_max must not exceed many_min");
  GroupAssignment g;
  g.many_min = many_min;
  g.few_max = few_max;
  g.tags.reserve(counts.size());
  for (int c : counts) {
    if (c > many_min)
      g.tags.push_back(Group::Many);
    else if (c < few_max)
      g.tags.push_back(Group::Few);
    else
      g.tags.push_back(Group::Medium);
  }
  return g;
}

namespace {

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

enum Stream : std::uint64_t { kMeans = 1, kVars, kTrain, kVal, kTest, kBalanced };

}  // namespace

EmbeddingDataset sample_mixture(const GroundTruth& truth, std::span<const int> per_class, Rng& rng) {
  const std::size_t num_classes = truth.means.size();
  GLAG_EXPECT(per_class.size() == num_classes, "per-class sizes must cover every class");
  const std::size_t dim = num_classes ? truth.means[0].size() : 0;
  const std::size_t total = std::accumulate(per_class.begin(), per_class.end(), std::size_t{0});
  EmbeddingDataset ds;
  ds.num_classes = static_cast<int>(num_classes);
  ds.features = Matrix(total, dim);
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (int i = 0; i < per_class[k]; ++i, ++row) {
      auto r = ds.features.row(row);
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = truth.means[k][d] + std::sqrt(truth.variances[k][d]) * rng.normal();
        r[d] = to_f32(std::max(0.0, v));
      }
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

SynthData synth_gaussian_mixture(const SynthSpec& spec, std::uint64_t seed) {
  GLAG_EXPECT(spec.dim >= 2, "synthetic dimension must be >= 2");
  GLAG_EXPECT(spec.separation >= 0.0, "separation must be non-negative");
  GLAG_EXPECT(spec.val_per_class >= 0 && spec.test_per_class >= 0 && spec.balanced_per_class >= 0,
              "split sizes must be non-negative");
  const auto counts = make_longtail_counts(spec.longtail);
  const std::size_t num_classes = counts.size();
  const auto dim = static_cast<std::size_t>(spec.dim);

  SynthData out;
  Rng mean_rng = Rng::derive(seed, kMeans);
  Rng var_rng = Rng::derive(seed, kVars);
  out.truth.means.assign(num_classes, Vector(dim));
  out.truth.variances.assign(num_classes, Vector(dim));
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t d = 0; d < dim; ++d) {
      out.truth.means[k][d] = mean_rng.uniform(1.0, 1.0 + spec.separation);
      out.truth.variances[k][d] = var_rng.uniform(0.25, 1.0);
    }
  }

  Rng train_rng = Rng::derive(seed, kTrain);
  Rng val_rng = Rng::derive(seed, kVal);
  Rng test_rng = Rng::derive(seed, kTest);
  Rng bal_rng = Rng::derive(seed, kBalanced);
  out.train = sample_mixture(out.truth, counts, train_rng);
  out.val = sample_mixture(out.truth, std::vector<int>(num_classes, spec.val_per_class), val_rng);
  out.test = sample_mixture(out.truth, std::vector<int>(num_classes, spec.test_per_class), test_rng);
  out.balanced =
      sample_mixture(out.truth, std::vector<int>(num_classes, spec.balanced_per_class), bal_rng);
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    return std::bit_cast<float>(bits);
  }
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw ParseError(pos_, std::string("truncated file while reading ") + what);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingDataset& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  out.reserve(16 + ds.size() * (4 + 4 * ds.dim()));
  for (char c : {'E', 'M', 'B', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, static_cast<std::uint32_t>(ds.size()));
  put_u32(out, static_cast<std::uint32_t>(ds.dim()));
  put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(ds.labels[i]));
    for (double v : ds.features.row(i)) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

void save_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_embeddings(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

EmbeddingDataset decode_embeddings(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw ParseError(0, "empty embedding file");
  ByteReader in(bytes);
  in.need(4, "magic");
  if (std::memcmp(bytes.data(), "EMB1", 4) != 0) throw ParseError(0, "bad magic, expected EMB1");
  in.u32("magic");
  const std::uint32_t n = in.u32("header N");
  const std::uint32_t d = in.u32("header D");
  const std::uint32_t l = in.u32("header L");
  if (l == 0) throw ParseError(12, "header declares zero classes");
  EmbeddingDataset ds;
  ds.num_classes = static_cast<int>(l);
  const std::uint64_t record = 4ull + 4ull * d;
  if (in.remaining() < record * n) {
    // report where the first missing record starts
    const std::uint64_t complete = in.remaining() / record;
    throw ParseError(in.offset() + complete * record,
                     "truncated file: header declares " + std::to_string(n) + " records, found " +
                         std::to_string(complete));
  }
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t at = in.offset();
    const std::uint32_t label = in.u32("label");
    if (label >= l)
      throw ParseError(at, "label " + std::to_string(label) + " out of range for L=" + std::to_string(l));
    ds.labels[i] = static_cast<int>(label);
    auto r = ds.features.row(i);
    for (std::uint32_t j = 0; j < d; ++j) r[j] = static_cast<double>(in.f32("feature"));
  }
  if (in.remaining() != 0) throw ParseError(in.offset(), "trailing bytes after last record");
  return ds;
}

EmbeddingDataset parse_embeddings_csv(const std::string& text, int num_classes) {
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line)) throw ParseError(0, "empty CSV file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t dim = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    std::getline(hs, cell, ',');
    if (cell != "label") throw ParseError(0, "CSV header must start with 'label'");
    while (std::getline(hs, cell, ',')) {
      if (cell != "f" + std::to_string(dim)) throw ParseError(0, "unexpected CSV column: " + cell);
      ++dim;
    }
  }
  offset += line.size() + 1;
  std::vector<double> values;
  std::vector<int> labels;
  int max_label = -1;
  while (std::getline(in, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      if (col == 0) {
        const long y = std::strtol(cell.c_str(), &end, 10);
        if (end == cell.c_str() || *end != '\0' || y < 0) throw ParseError(at, "bad label: " + cell);
        if (num_classes > 0 && y >= num_classes) throw ParseError(at, "label out of range: " + cell);
        labels.push_back(static_cast<int>(y));
        max_label = std::max(max_label, static_cast<int>(y));
      } else {
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0') throw ParseError(at, "bad feature value: " + cell);
        values.push_back(v);
      }
      ++col;
    }
    if (col != dim + 1)
      throw ParseError(at, "row has " + std::to_string(col) + " columns, expected " + std::to_string(dim + 1));
  }
  EmbeddingDataset ds;
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  if (ds.num_classes <= 0) throw ParseError(offset, "CSV contains no rows");
  ds.features = Matrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

EmbeddingDataset load_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 5 && std::memcmp(bytes.data(), "label", 5) == 0)
    return parse_embeddings_csv(std::string(bytes.begin(), bytes.end()));
  return decode_embeddings(bytes);
}

std::uint64_t dataset_hash(const EmbeddingDataset& ds) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (std::uint8_t b : encode_embeddings(ds)) {
    h ^= b;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace glag
