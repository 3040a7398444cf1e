#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dggn {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from (seed, stream) with splitmix64.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

struct Sample {
    std::vector<double> features;
    std::size_t class_id = 0;
    std::size_t id = 0;  // unique within its dataset
};

enum class Partition { train, val, test };
std::string_view partition_name(Partition p);
Partition parse_partition(std::string_view name);

/// Samples grouped by class, with the classes divided into three disjoint
/// partitions. Immutable once built.
struct DatasetSplit {
    std::size_t dim = 0;
    std::vector<std::vector<Sample>> by_class;  // index = class_id
    std::vector<std::size_t> train_classes;
    std::vector<std::size_t> val_classes;
    std::vector<std::size_t> test_classes;

    const std::vector<std::size_t>& classes(Partition p) const;
    std::size_t num_classes() const { return by_class.size(); }
    std::size_t num_samples() const;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SynthParams {
    std::size_t num_classes = 100;
    std::size_t per_class = 30;
    std::size_t dim = 16;
    double spread = 0.1;
    std::uint64_t seed = 0;
};

/// Gaussian clusters around class means drawn uniformly on the unit sphere.
/// Classes are split 60/20/20 (train/val/test) in generation order.
/// spread == 0 is accepted and yields noiseless samples.
DatasetSplit synth_dataset(const SynthParams& params);

/// Reads `split,class_id,f_1,...,f_D` rows. Throws DatasetError naming the
/// offending line.
DatasetSplit load_feature_csv(const std::filesystem::path& path);
void save_feature_csv(const DatasetSplit& data, const std::filesystem::path& path);

/// One N-way K-shot task. Support is grouped by class in draw order;
/// labels are episode-local (0..way-1, in draw order).
struct Episode {
    std::vector<Sample> support;
    std::vector<Sample> query;
    std::vector<std::size_t> support_labels;
    std::vector<std::size_t> query_labels;
    std::size_t way = 0;
    std::size_t shot = 0;
    std::size_t query_count = 0;
    std::map<std::size_t, std::size_t> class_relabeling;  // original id -> local label
    std::uint64_t seed = 0;  // seed the episode was drawn with, for diagnostics

    std::size_t size() const { return support.size() + query.size(); }
    std::size_t dim() const;
    /// Labels of all nodes, support first.
    std::vector<std::size_t> labels() const;
};

struct EpisodeShape {
    std::size_t way = 5;
    std::size_t shot = 1;
    std::size_t query = 5;
    bool allow_unbalanced = false;
};

/// Draws `way` classes without replacement, then shot + per-class query
/// samples without replacement inside each class. With unbalanced queries
/// the remainder query % way goes to the first classes in draw order.
Episode sample_episode(const DatasetSplit& data, Partition partition, const EpisodeShape& shape,
                       Rng& rng);

/// Reads a single task from `role,class_id,f_1,...,f_D` rows, role being
/// support or query. Support classes are relabeled in ascending class_id
/// order; every support class must have the same number of rows. A query
/// whose class_id is not a support class gets the label `way` (unknown).
Episode load_episode_csv(const std::filesystem::path& path);

/// Checks the structural invariants of an episode; throws DatasetError.
void validate_episode(const Episode& episode);

}  // namespace dggn
