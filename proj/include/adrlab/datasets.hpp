#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adrlab/rng.hpp"
#include "adrlab/tensor.hpp"

namespace adrlab::data {

/// `[n, 2]` points with one integer class label per row.
struct LabeledSet2D {
    Tensor points;
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    void validate(std::size_t num_classes) const;

    friend bool operator==(const LabeledSet2D&, const LabeledSet2D&) = default;
};

struct MoonsConfig {
    std::size_t n_per_domain = 300;
    double noise_std = 0.1;
    double rotation_degrees = 30.0;
    std::uint64_t seed = 0;
};

/// Interleaved half circles: class 0 at (cos t, sin t), class 1 at
/// (1 - cos t, 0.5 - sin t), with t on an even grid over [0, pi] and
/// isotropic Gaussian noise of std `noise_std` added to every coordinate.
/// Class 0 gets floor(n/2) points, class 1 gets the rest.
LabeledSet2D make_two_moons(std::size_t n, double noise_std, Rng& rng);

/// Column means of the points.
std::array<double, 2> centroid(const LabeledSet2D& set);

/// Rotates every point by `degrees` (counter-clockwise) about `center`.
LabeledSet2D rotate(const LabeledSet2D& set, double degrees, std::array<double, 2> center);
/// Rotates about the set's own centroid.
LabeledSet2D rotate(const LabeledSet2D& set, double degrees);

struct DomainPair {
    LabeledSet2D source;
    LabeledSet2D target;
};

/// Source moons and their rotation about the source centroid.
DomainPair make_moons_domains(const MoonsConfig& config);

struct MixtureConfig {
    std::size_t num_classes = 2;
    std::size_t n_labeled_per_class = 10;
    std::size_t n_unlabeled = 2000;
    double separation = 4.0;
    double noise_std = 0.5;
};

struct MixtureData {
    LabeledSet2D labeled;
    Tensor unlabeled;
};

/// Mean of class k: separation * (cos 2pi k/K, sin 2pi k/K).
std::array<double, 2> mixture_mean(const MixtureConfig& config, std::size_t k);

/// Exactly `n_labeled_per_class` labeled points per class and `n_unlabeled`
/// points whose classes are drawn uniformly.
MixtureData make_gaussian_mixture(const MixtureConfig& config, Rng& rng);
/// `n` labeled points with uniformly drawn classes (e.g. a test split).
LabeledSet2D sample_gaussian_mixture(const MixtureConfig& config, std::size_t n, Rng& rng);

/// Epoch-wise shuffled minibatches of row indices. Each epoch uses a fresh
/// permutation derived from (rng seed, epoch); a trailing short batch is
/// dropped. `epochs == 0` streams forever.
class BatchIterator {
public:
    BatchIterator(std::size_t n, std::size_t batch_size, Rng rng, std::size_t epochs = 0);

    std::optional<std::vector<std::size_t>> next();
    std::size_t batches_per_epoch() const noexcept { return n_ / batch_size_; }

private:
    void start_epoch();

    std::size_t n_;
    std::size_t batch_size_;
    Rng rng_;
    std::size_t epochs_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

/// Rows `x,y,label,domain` with a header line.
void write_points_csv(const std::filesystem::path& path, std::span<const LabeledSet2D* const> sets,
                      std::span<const std::string> domains);

struct CsvPoint {
    double x = 0.0;
    double y = 0.0;
    std::size_t label = 0;
    std::string domain;
};
std::vector<CsvPoint> read_points_csv(const std::filesystem::path& path);

}  // namespace adrlab::data
