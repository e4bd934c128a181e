#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amda/configfile.hpp"
#include "amda/sequence.hpp"
#include "amda/tensor.hpp"

namespace amda {

enum class Domain { source, target };
enum class Split { train, test };

/// How much label information a load is allowed to see. Unlabeled-train
/// access never even parses stored boundary text; labeled access is
/// restricted to the source domain; eval access sees everything.
enum class Access { labeled, unlabeled_train, eval };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain domain_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Parameters of one synthetic paired-domain dataset. The target domain is
/// the source distribution pushed through a fixed rotation of
/// `rotation_angle` in random coordinate 2-planes plus an additive style
/// bias of magnitude `style_bias`.
struct ScenarioSpec {
  std::size_t n_frames = 32;
  std::size_t visual_dim = 24;
  std::size_t text_dim = 16;
  std::size_t num_classes = 8;
  std::size_t train_per_domain = 2000;
  std::size_t test_per_domain = 500;
  double rotation_angle = 0.0; ///< radians, in [0, pi]
  double style_bias = 0.0;
  double noise_sigma = 0.3;
  std::uint64_t seed = 1;

  /// Reads keys from a [scenario] section. Missing keys keep defaults.
  static ScenarioSpec from_config(const ConfigFile& cfg);
  ConfigFile to_config() const;
  void validate() const;
};

/// One generated sample, already quantized to the 32-bit storage precision
/// so results never depend on whether data came fresh or from disk.
struct SampleRecord {
  std::uint32_t id = 0;
  Domain domain = Domain::source;
  Split split = Split::train;
  std::uint32_t class_id = 0;
  TemporalBoundary boundary{0, 0};
  Tensor visual; ///< n_frames x visual_dim
  Tensor query;  ///< m x text_dim, m in [4, 10]
};

struct GeneratedCorpus {
  ScenarioSpec spec;
  std::vector<SampleRecord> samples;
};

/// Deterministic given spec.seed: per-sample streams are derived by sample
/// id, classes cycle round-robin within each (domain, split) block, and
/// boundaries are uniform over segments spanning 10-60% of the video.
GeneratedCorpus generate_corpus(const ScenarioSpec& spec);

/// Writes `manifest.cfg` and `corpus.bin` under `dir` (created if needed).
void write_corpus(const GeneratedCorpus& corpus, const std::string& dir);

/// One sample as seen through an access mode; `boundary` is empty when the
/// mode withholds it.
struct LoadedSample {
  std::uint32_t id = 0;
  Domain domain = Domain::source;
  Split split = Split::train;
  std::uint32_t class_id = 0;
  std::optional<TemporalBoundary> boundary;
  Tensor visual;
  Tensor query;
};

struct Corpus {
  ScenarioSpec spec;
  Access access = Access::eval;
  std::vector<LoadedSample> samples;

  std::vector<const LoadedSample*> select(Domain d, Split s) const;
};

/// Loads the records matching the optional domain/split filters under the
/// given access mode. Labeled access over any target-domain record raises
/// AccessViolationError; unlabeled-train access leaves every boundary text
/// unparsed; eval access parses all boundaries.
Corpus load_corpus(const std::string& dir, Access access,
                   std::optional<Domain> domain = {},
                   std::optional<Split> split = {});

/// A paired mini-batch: B labeled source samples and B unlabeled target
/// samples (whatever the caller loaded them as).
struct DomainBatch {
  std::vector<const LoadedSample*> source;
  std::vector<const LoadedSample*> target;
};

/// One epoch of paired batches. The two sides are shuffled independently
/// from streams derived off `seed`; trailing partial batches are dropped.
class BatchIterator {
 public:
  BatchIterator(std::vector<const LoadedSample*> source,
                std::vector<const LoadedSample*> target,
                std::size_t batch_size, std::uint64_t seed);

  std::size_t num_batches() const { return num_batches_; }

  /// Fills `out` with the next batch; returns false once the epoch ends.
  bool next(DomainBatch& out);

 private:
  std::vector<const LoadedSample*> source_, target_;
  std::size_t batch_size_ = 0;
  std::size_t num_batches_ = 0;
  std::size_t cursor_ = 0;
};

} // namespace amda
