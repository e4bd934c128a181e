#include "amda/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "amda/rng.hpp"

namespace amda {

namespace {

// Stream tags for derived generator seeds; distinct consumers never share a
// stream, so adding or skipping one cannot shift another.
constexpr std::uint64_t kStreamPrototypes = 1;
constexpr std::uint64_t kStreamShift = 2;
constexpr std::uint64_t kStreamSample = 3;
constexpr std::uint64_t kStreamShuffleSource = 4;
constexpr std::uint64_t kStreamShuffleTarget = 5;

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kMagic[4] = {'A', 'M', 'D', 'A'};
constexpr std::size_t kRecordHeaderBytes = 16;

std::size_t get_size(const ConfigFile& cfg, const std::string& key,
                     std::size_t fallback) {
  const long long v = cfg.get_int(key, static_cast<long long>(fallback));
  if (v < 0) {
    throw ConfigError("config key '" + key + "' must be non-negative, got " +
                      std::to_string(v));
  }
  return static_cast<std::size_t>(v);
}

void append_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t read_u32_le(const std::string& bytes, std::size_t offset) {
  const auto b = [&](std::size_t i) {
    return static_cast<std::uint32_t>(
        static_cast<unsigned char>(bytes[offset + i]));
  };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

/// One blob record: 16-byte header (magic, rows, cols, record id) followed
/// by row-major little-endian 32-bit floats.
void append_record(std::string& out, const Tensor& matrix,
                   std::uint32_t record_id) {
  out.append(kMagic, 4);
  append_u32_le(out, static_cast<std::uint32_t>(matrix.shape()[0]));
  append_u32_le(out, static_cast<std::uint32_t>(matrix.shape()[1]));
  append_u32_le(out, record_id);
  for (double v : matrix.values()) {
    append_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

Tensor parse_record(const std::string& blob, std::size_t offset,
                    std::size_t bytes, std::uint32_t expect_id,
                    std::size_t expect_cols) {
  const std::string at = " at byte offset " + std::to_string(offset);
  if (offset + kRecordHeaderBytes > blob.size()) {
    throw FormatError("corpus blob truncated" + at);
  }
  if (blob.compare(offset, 4, kMagic, 4) != 0) {
    throw FormatError("bad corpus record magic" + at);
  }
  const std::uint32_t rows = read_u32_le(blob, offset + 4);
  const std::uint32_t cols = read_u32_le(blob, offset + 8);
  const std::uint32_t id = read_u32_le(blob, offset + 12);
  if (id != expect_id) {
    throw FormatError("corpus record id mismatch (expected " +
                      std::to_string(expect_id) + ", found " +
                      std::to_string(id) + ")" + at);
  }
  if (cols != expect_cols) {
    throw FormatError("corpus record has " + std::to_string(cols) +
                      " columns, expected " + std::to_string(expect_cols) + at);
  }
  const std::size_t payload = std::size_t{rows} * cols * 4;
  if (bytes != kRecordHeaderBytes + payload ||
      offset + bytes > blob.size()) {
    throw FormatError("corpus record length mismatch" + at);
  }
  std::vector<double> values(std::size_t{rows} * cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t raw = read_u32_le(blob, offset + kRecordHeaderBytes + 4 * i);
    values[i] = static_cast<double>(std::bit_cast<float>(raw));
  }
  return Tensor::from({rows, cols}, std::move(values));
}

/// Uniform draw over all segments whose length is between 10% and 60% of n.
TemporalBoundary draw_boundary(std::mt19937_64& rng, std::size_t n) {
  const auto lo = static_cast<std::size_t>(
      std::max<double>(1.0, std::ceil(0.1 * static_cast<double>(n))));
  auto hi = static_cast<std::size_t>(
      std::floor(0.6 * static_cast<double>(n)));
  if (hi < lo) hi = lo;
  std::size_t total = 0;
  for (std::size_t len = lo; len <= hi; ++len) total += n - len + 1;
  std::size_t idx = static_cast<std::size_t>(bounded_uint(rng, total));
  for (std::size_t len = lo; len <= hi; ++len) {
    const std::size_t starts = n - len + 1;
    if (idx < starts) return {idx, idx + len - 1};
    idx -= starts;
  }
  throw Error("draw_boundary: segment enumeration out of range");
}

void quantize_f32(std::vector<double>& values) {
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

template <class T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded_uint(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

TemporalBoundary parse_boundary_text(const std::string& text,
                                     std::size_t n_frames, std::uint32_t id) {
  const std::string where =
      "sample " + std::to_string(id) + ": boundary '" + text + "'";
  const std::size_t dots = text.find("..");
  if (dots == std::string::npos) {
    throw FormatError(where + " is not of the form start..end");
  }
  auto parse_part = [&](const std::string& part) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(part.c_str(), &end, 10);
    if (part.empty() || end != part.c_str() + part.size()) {
      throw FormatError(where + " has a non-numeric endpoint");
    }
    return static_cast<std::size_t>(v);
  };
  const std::size_t s = parse_part(text.substr(0, dots));
  const std::size_t e = parse_part(text.substr(dots + 2));
  try {
    return make_boundary(s, e, n_frames);
  } catch (const Error& err) {
    throw FormatError(where + " is invalid: " + err.what());
  }
}

} // namespace

std::string to_string(Domain d) {
  return d == Domain::source ? "source" : "target";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + s + "' (expected source or target)");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

ScenarioSpec ScenarioSpec::from_config(const ConfigFile& cfg) {
  ScenarioSpec s;
  s.n_frames = get_size(cfg, "scenario.n_frames", s.n_frames);
  s.visual_dim = get_size(cfg, "scenario.visual_dim", s.visual_dim);
  s.text_dim = get_size(cfg, "scenario.text_dim", s.text_dim);
  s.num_classes = get_size(cfg, "scenario.num_classes", s.num_classes);
  s.train_per_domain =
      get_size(cfg, "scenario.train_per_domain", s.train_per_domain);
  s.test_per_domain =
      get_size(cfg, "scenario.test_per_domain", s.test_per_domain);
  s.rotation_angle =
      cfg.get_double("scenario.rotation_angle", s.rotation_angle);
  s.style_bias = cfg.get_double("scenario.style_bias", s.style_bias);
  s.noise_sigma = cfg.get_double("scenario.noise_sigma", s.noise_sigma);
  s.seed = static_cast<std::uint64_t>(get_size(cfg, "scenario.seed", 1));
  s.validate();
  return s;
}

ConfigFile ScenarioSpec::to_config() const {
  ConfigFile cfg;
  cfg.set_int("scenario.n_frames", static_cast<long long>(n_frames));
  cfg.set_int("scenario.visual_dim", static_cast<long long>(visual_dim));
  cfg.set_int("scenario.text_dim", static_cast<long long>(text_dim));
  cfg.set_int("scenario.num_classes", static_cast<long long>(num_classes));
  cfg.set_int("scenario.train_per_domain",
              static_cast<long long>(train_per_domain));
  cfg.set_int("scenario.test_per_domain",
              static_cast<long long>(test_per_domain));
  cfg.set_double("scenario.rotation_angle", rotation_angle);
  cfg.set_double("scenario.style_bias", style_bias);
  cfg.set_double("scenario.noise_sigma", noise_sigma);
  cfg.set_int("scenario.seed", static_cast<long long>(seed));
  return cfg;
}

void ScenarioSpec::validate() const {
  if (n_frames < 2) {
    throw ConfigError("scenario: n_frames must be at least 2, got " +
                      std::to_string(n_frames));
  }
  if (visual_dim == 0 || text_dim == 0) {
    throw ConfigError("scenario: feature dimensions must be positive");
  }
  if (num_classes < 2) {
    throw ConfigError("scenario: num_classes must be at least 2, got " +
                      std::to_string(num_classes));
  }
  if (train_per_domain == 0 || test_per_domain == 0) {
    throw ConfigError("scenario: sample counts must be positive");
  }
  if (!(rotation_angle >= 0.0 && rotation_angle <= 3.14159265358979323846)) {
    throw ConfigError("scenario: rotation_angle must lie in [0, pi], got " +
                      std::to_string(rotation_angle));
  }
  if (!(noise_sigma >= 0.0)) {
    throw ConfigError("scenario: noise_sigma must be non-negative, got " +
                      std::to_string(noise_sigma));
  }
  if (!(style_bias >= 0.0)) {
    throw ConfigError("scenario: style_bias must be non-negative, got " +
                      std::to_string(style_bias));
  }
}

GeneratedCorpus generate_corpus(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_frames, vd = spec.visual_dim,
                    td = spec.text_dim, k = spec.num_classes;

  // Class and background prototypes, fixed per corpus.
  auto proto_rng = make_rng(derive_seed(spec.seed, kStreamPrototypes));
  auto draw_matrix = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> m(rows * cols);
    for (double& v : m) v = 2.0 * uniform_double(proto_rng) - 1.0;
    return m;
  };
  const std::vector<double> visual_protos = draw_matrix(k, vd);
  const std::vector<double> background = draw_matrix(1, vd);
  const std::vector<double> text_protos = draw_matrix(k, td);

  // Fixed target-domain shift: rotate each random coordinate pair by the
  // scenario angle, then add a style bias along a random direction.
  auto shift_rng = make_rng(derive_seed(spec.seed, kStreamShift));
  std::vector<std::size_t> perm(vd);
  for (std::size_t i = 0; i < vd; ++i) perm[i] = i;
  shuffle_vec(perm, shift_rng);
  const double c = std::cos(spec.rotation_angle);
  const double s = std::sin(spec.rotation_angle);
  std::vector<double> bias(vd, 0.0);
  double norm2 = 0.0;
  for (double& v : bias) {
    v = gaussian(shift_rng);
    norm2 += v * v;
  }
  const double norm = std::sqrt(norm2);
  for (double& v : bias) v = norm > 0.0 ? spec.style_bias * v / norm : 0.0;

  auto apply_shift = [&](std::vector<double>& rows) {
    for (std::size_t t = 0; t < rows.size() / vd; ++t) {
      double* row = rows.data() + t * vd;
      for (std::size_t p = 0; p + 1 < vd; p += 2) {
        const double x = row[perm[p]], y = row[perm[p + 1]];
        row[perm[p]] = c * x - s * y;
        row[perm[p + 1]] = s * x + c * y;
      }
      for (std::size_t j = 0; j < vd; ++j) row[j] += bias[j];
    }
  };

  GeneratedCorpus out;
  out.spec = spec;
  std::uint32_t next_id = 0;
  for (Domain domain : {Domain::source, Domain::target}) {
    for (Split split : {Split::train, Split::test}) {
      const std::size_t count = split == Split::train ? spec.train_per_domain
                                                      : spec.test_per_domain;
      for (std::size_t i = 0; i < count; ++i) {
        SampleRecord r;
        r.id = next_id++;
        r.domain = domain;
        r.split = split;
        r.class_id = static_cast<std::uint32_t>(i % k); // exact class balance
        auto rng = make_rng(derive_seed(spec.seed, kStreamSample, r.id));

        r.boundary = draw_boundary(rng, n);
        std::vector<double> visual(n * vd);
        for (std::size_t t = 0; t < n; ++t) {
          const bool inside =
              t >= r.boundary.start_frame && t <= r.boundary.end_frame;
          const double* proto = inside
                                    ? visual_protos.data() + r.class_id * vd
                                    : background.data();
          for (std::size_t j = 0; j < vd; ++j) {
            visual[t * vd + j] = proto[j] + spec.noise_sigma * gaussian(rng);
          }
        }
        if (domain == Domain::target) apply_shift(visual);
        quantize_f32(visual);
        r.visual = Tensor::from({n, vd}, std::move(visual));

        const std::size_t m = 4 + static_cast<std::size_t>(bounded_uint(rng, 7));
        std::vector<double> query(m * td);
        for (std::size_t t = 0; t < m; ++t) {
          for (std::size_t j = 0; j < td; ++j) {
            query[t * td + j] = text_protos[r.class_id * td + j] +
                                spec.noise_sigma * gaussian(rng);
          }
        }
        quantize_f32(query);
        r.query = Tensor::from({m, td}, std::move(query));
        out.samples.push_back(std::move(r));
      }
    }
  }
  return out;
}

void write_corpus(const GeneratedCorpus& corpus, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create corpus directory " + dir + ": " +
                  ec.message());
  }

  std::string blob;
  ConfigFile manifest = corpus.spec.to_config();
  manifest.set_int("corpus.format_version", kFormatVersion);
  manifest.set_int("corpus.sample_count",
                   static_cast<long long>(corpus.samples.size()));
  for (const SampleRecord& r : corpus.samples) {
    const std::string prefix = "sample." + std::to_string(r.id) + ".";
    const std::size_t visual_offset = blob.size();
    append_record(blob, r.visual, 2 * r.id);
    const std::size_t query_offset = blob.size();
    append_record(blob, r.query, 2 * r.id + 1);

    manifest.set(prefix + "domain", to_string(r.domain));
    manifest.set(prefix + "split", to_string(r.split));
    manifest.set_int(prefix + "class", r.class_id);
    manifest.set(prefix + "boundary",
                 std::to_string(r.boundary.start_frame) + ".." +
                     std::to_string(r.boundary.end_frame));
    manifest.set_int(prefix + "visual_offset",
                     static_cast<long long>(visual_offset));
    manifest.set_int(prefix + "visual_bytes",
                     static_cast<long long>(query_offset - visual_offset));
    manifest.set_int(prefix + "query_offset",
                     static_cast<long long>(query_offset));
    manifest.set_int(prefix + "query_bytes",
                     static_cast<long long>(blob.size() - query_offset));
  }

  const std::string blob_path = dir + "/corpus.bin";
  const std::string manifest_path = dir + "/manifest.cfg";
  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    if (!out.write(blob.data(), static_cast<std::streamsize>(blob.size()))) {
      throw IoError("cannot write corpus blob: " + blob_path);
    }
  }
  {
    const std::string text = manifest.serialize();
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
      throw IoError("cannot write corpus manifest: " + manifest_path);
    }
  }
}

std::vector<const LoadedSample*> Corpus::select(Domain d, Split s) const {
  std::vector<const LoadedSample*> out;
  for (const LoadedSample& r : samples) {
    if (r.domain == d && r.split == s) out.push_back(&r);
  }
  return out;
}

Corpus load_corpus(const std::string& dir, Access access,
                   std::optional<Domain> domain, std::optional<Split> split) {
  const std::string manifest_path = dir + "/manifest.cfg";
  const std::string blob_path = dir + "/corpus.bin";
  ConfigFile manifest = ConfigFile::parse_file(manifest_path);

  const long long version = manifest.get_int("corpus.format_version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported corpus format version " +
                      std::to_string(version));
  }
  Corpus corpus;
  corpus.spec = ScenarioSpec::from_config(manifest);
  corpus.access = access;
  const std::size_t count = get_size(manifest, "corpus.sample_count", 0);

  std::ifstream in(blob_path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open corpus blob: " + blob_path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string blob = buf.str();

  // Check the manifest references the blob exactly once, in order, with no
  // gaps, before trusting any offset.
  std::vector<std::pair<std::size_t, std::size_t>> extents;
  extents.reserve(2 * count);
  for (std::size_t id = 0; id < count; ++id) {
    const std::string prefix = "sample." + std::to_string(id) + ".";
    extents.emplace_back(get_size(manifest, prefix + "visual_offset", 0),
                         get_size(manifest, prefix + "visual_bytes", 0));
    extents.emplace_back(get_size(manifest, prefix + "query_offset", 0),
                         get_size(manifest, prefix + "query_bytes", 0));
  }
  std::sort(extents.begin(), extents.end());
  std::size_t expect = 0;
  for (const auto& [offset, bytes] : extents) {
    if (offset != expect || bytes <= kRecordHeaderBytes) {
      throw FormatError("corpus manifest records are not contiguous at byte "
                        "offset " +
                        std::to_string(offset));
    }
    expect = offset + bytes;
  }
  if (expect != blob.size()) {
    throw FormatError("corpus blob size " + std::to_string(blob.size()) +
                      " does not match manifest extent " +
                      std::to_string(expect));
  }

  for (std::size_t id = 0; id < count; ++id) {
    const std::string prefix = "sample." + std::to_string(id) + ".";
    LoadedSample r;
    r.id = static_cast<std::uint32_t>(id);
    r.domain = domain_from_string(manifest.get_string(prefix + "domain"));
    r.split = split_from_string(manifest.get_string(prefix + "split"));
    r.class_id =
        static_cast<std::uint32_t>(get_size(manifest, prefix + "class", 0));
    if (domain && r.domain != *domain) continue;
    if (split && r.split != *split) continue;

    if (access == Access::labeled && r.domain == Domain::target) {
      throw AccessViolationError(
          "labeled access requires the source domain; target-domain records "
          "need unlabeled-train or eval access (sample " +
          std::to_string(id) + ")");
    }
    if (access != Access::unlabeled_train) {
      r.boundary = parse_boundary_text(manifest.get_string(prefix + "boundary"),
                                       corpus.spec.n_frames, r.id);
    }
    r.visual = parse_record(blob, get_size(manifest, prefix + "visual_offset", 0),
                            get_size(manifest, prefix + "visual_bytes", 0),
                            2 * r.id, corpus.spec.visual_dim);
    r.query = parse_record(blob, get_size(manifest, prefix + "query_offset", 0),
                           get_size(manifest, prefix + "query_bytes", 0),
                           2 * r.id + 1, corpus.spec.text_dim);
    if (r.visual.shape()[0] != corpus.spec.n_frames) {
      throw FormatError("sample " + std::to_string(id) + ": visual record has " +
                        std::to_string(r.visual.shape()[0]) +
                        " frames, expected " +
                        std::to_string(corpus.spec.n_frames));
    }
    corpus.samples.push_back(std::move(r));
  }
  return corpus;
}

BatchIterator::BatchIterator(std::vector<const LoadedSample*> source,
                             std::vector<const LoadedSample*> target,
                             std::size_t batch_size, std::uint64_t seed)
    : source_(std::move(source)),
      target_(std::move(target)),
      batch_size_(batch_size) {
  if (source_.empty() || target_.empty()) {
    throw DegenerateInputError("batch_iterator: empty sample set");
  }
  if (batch_size_ == 0) {
    throw ConfigError("batch_iterator: batch size must be positive");
  }
  if (batch_size_ > source_.size() || batch_size_ > target_.size()) {
    throw ConfigError("batch_iterator: batch size " +
                      std::to_string(batch_size_) + " exceeds a sample set (" +
                      std::to_string(source_.size()) + " source, " +
                      std::to_string(target_.size()) + " target)");
  }
  auto src_rng = make_rng(derive_seed(seed, kStreamShuffleSource));
  auto tgt_rng = make_rng(derive_seed(seed, kStreamShuffleTarget));
  shuffle_vec(source_, src_rng);
  shuffle_vec(target_, tgt_rng);
  num_batches_ =
      std::min(source_.size() / batch_size_, target_.size() / batch_size_);
}

bool BatchIterator::next(DomainBatch& out) {
  if (cursor_ >= num_batches_) return false;
  out.source.assign(source_.begin() + cursor_ * batch_size_,
                    source_.begin() + (cursor_ + 1) * batch_size_);
  out.target.assign(target_.begin() + cursor_ * batch_size_,
                    target_.begin() + (cursor_ + 1) * batch_size_);
  ++cursor_;
  return true;
}

} // namespace amda
