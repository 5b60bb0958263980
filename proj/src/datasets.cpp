#include "adrlab/datasets.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adrlab/errors.hpp"

namespace adrlab::data {

void LabeledSet2D::validate(std::size_t num_classes) const {
    require(!labels.empty(), "LabeledSet2D: at least one point is required");
    require(points.rank() == 2 && points.cols() == 2 && points.rows() == labels.size(),
            "LabeledSet2D: points must be [n, 2] with one label per row");
    require(points.all_finite(), "LabeledSet2D: points must be finite");
    for (auto label : labels) require(label < num_classes, "LabeledSet2D: label out of range");
}

LabeledSet2D make_two_moons(std::size_t n, double noise_std, Rng& rng) {
    require(n >= 2, "make_two_moons: n must be at least 2");
    require(noise_std >= 0.0, "make_two_moons: noise_std must be non-negative");
    const std::size_t n_outer = n / 2;
    const std::size_t n_inner = n - n_outer;
    auto angle = [](std::size_t i, std::size_t count) {
        return count == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
    };

    LabeledSet2D set{Tensor({n, 2}), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n_outer; ++i) {
        const double t = angle(i, n_outer);
        set.points.at(i, 0) = std::cos(t);
        set.points.at(i, 1) = std::sin(t);
        set.labels[i] = 0;
    }
    for (std::size_t i = 0; i < n_inner; ++i) {
        const double t = angle(i, n_inner);
        set.points.at(n_outer + i, 0) = 1.0 - std::cos(t);
        set.points.at(n_outer + i, 1) = 0.5 - std::sin(t);
        set.labels[n_outer + i] = 1;
    }
    if (noise_std > 0.0) {
        for (auto& v : set.points.data()) v += noise_std * rng.normal();
    }
    return set;
}

std::array<double, 2> centroid(const LabeledSet2D& set) {
    std::array<double, 2> c{0.0, 0.0};
    for (std::size_t r = 0; r < set.points.rows(); ++r) {
        c[0] += set.points.at(r, 0);
        c[1] += set.points.at(r, 1);
    }
    const double n = static_cast<double>(set.points.rows());
    return {c[0] / n, c[1] / n};
}

LabeledSet2D rotate(const LabeledSet2D& set, double degrees, std::array<double, 2> center) {
    const double radians = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(radians), sn = std::sin(radians);
    LabeledSet2D out = set;
    for (std::size_t r = 0; r < set.points.rows(); ++r) {
        const double dx = set.points.at(r, 0) - center[0];
        const double dy = set.points.at(r, 1) - center[1];
        out.points.at(r, 0) = center[0] + cs * dx - sn * dy;
        out.points.at(r, 1) = center[1] + sn * dx + cs * dy;
    }
    return out;
}

LabeledSet2D rotate(const LabeledSet2D& set, double degrees) {
    return rotate(set, degrees, centroid(set));
}

DomainPair make_moons_domains(const MoonsConfig& config) {
    require(config.n_per_domain >= 2, "MoonsConfig: n_per_domain must be at least 2");
    Rng rng = Rng(config.seed).split(0x6d6f6f6e);
    LabeledSet2D source = make_two_moons(config.n_per_domain, config.noise_std, rng);
    LabeledSet2D target = rotate(source, config.rotation_degrees);
    return {std::move(source), std::move(target)};
}

std::array<double, 2> mixture_mean(const MixtureConfig& config, std::size_t k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(config.num_classes);
    return {config.separation * std::cos(angle), config.separation * std::sin(angle)};
}

namespace {

void draw_point(const MixtureConfig& config, std::size_t k, Rng& rng, Tensor& out, std::size_t row) {
    const auto mu = mixture_mean(config, k);
    out.at(row, 0) = mu[0] + config.noise_std * rng.normal();
    out.at(row, 1) = mu[1] + config.noise_std * rng.normal();
}

void check_mixture(const MixtureConfig& config) {
    require(config.num_classes >= 2, "MixtureConfig: need at least two classes");
    require(config.noise_std >= 0.0, "MixtureConfig: noise_std must be non-negative");
}

}  // namespace

MixtureData make_gaussian_mixture(const MixtureConfig& config, Rng& rng) {
    check_mixture(config);
    require(config.n_labeled_per_class >= 1, "MixtureConfig: need at least one label per class");
    require(config.n_unlabeled >= 1, "MixtureConfig: need at least one unlabeled point");
    const std::size_t n_labeled = config.num_classes * config.n_labeled_per_class;
    MixtureData data{{Tensor({n_labeled, 2}), std::vector<std::size_t>(n_labeled)}, Tensor({config.n_unlabeled, 2})};
    std::size_t row = 0;
    for (std::size_t k = 0; k < config.num_classes; ++k) {
        for (std::size_t i = 0; i < config.n_labeled_per_class; ++i, ++row) {
            draw_point(config, k, rng, data.labeled.points, row);
            data.labeled.labels[row] = k;
        }
    }
    for (std::size_t i = 0; i < config.n_unlabeled; ++i) {
        draw_point(config, rng.uniform_index(config.num_classes), rng, data.unlabeled, i);
    }
    return data;
}

LabeledSet2D sample_gaussian_mixture(const MixtureConfig& config, std::size_t n, Rng& rng) {
    check_mixture(config);
    require(n >= 1, "sample_gaussian_mixture: n must be positive");
    LabeledSet2D set{Tensor({n, 2}), std::vector<std::size_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = rng.uniform_index(config.num_classes);
        draw_point(config, k, rng, set.points, i);
        set.labels[i] = k;
    }
    return set;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

BatchIterator::BatchIterator(std::size_t n, std::size_t batch_size, Rng rng, std::size_t epochs)
    : n_(n), batch_size_(batch_size), rng_(rng), epochs_(epochs) {
    require(batch_size >= 1 && batch_size <= n, "BatchIterator: batch size must lie in [1, n]");
    start_epoch();
}

void BatchIterator::start_epoch() {
    Rng epoch_rng = rng_.split(epoch_);
    order_ = permutation(n_, epoch_rng);
    cursor_ = 0;
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
    if (cursor_ + batch_size_ > n_) {
        ++epoch_;
        if (epochs_ != 0 && epoch_ >= epochs_) return std::nullopt;
        start_epoch();
    }
    if (epochs_ != 0 && epoch_ >= epochs_) return std::nullopt;
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
    cursor_ += batch_size_;
    return batch;
}

void write_points_csv(const std::filesystem::path& path, std::span<const LabeledSet2D* const> sets,
                      std::span<const std::string> domains) {
    require(sets.size() == domains.size(), "write_points_csv: one domain name per set");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "x,y,label,domain\n";
    for (std::size_t s = 0; s < sets.size(); ++s) {
        const LabeledSet2D& set = *sets[s];
        for (std::size_t r = 0; r < set.size(); ++r) {
            out << set.points.at(r, 0) << ',' << set.points.at(r, 1) << ',' << set.labels[r] << ',' << domains[s]
                << '\n';
        }
    }
}

std::vector<CsvPoint> read_points_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<CsvPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string x, y, label, domain;
        std::getline(fields, x, ',');
        std::getline(fields, y, ',');
        std::getline(fields, label, ',');
        std::getline(fields, domain);
        points.push_back({std::stod(x), std::stod(y), static_cast<std::size_t>(std::stoul(label)), domain});
    }
    return points;
}

}  // namespace adrlab::data
