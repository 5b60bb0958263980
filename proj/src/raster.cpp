#include "adrlab/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "adrlab/errors.hpp"

namespace adrlab::render {

ImageRaster::ImageRaster(std::size_t width, std::size_t height, Rgb fill)
    : width_(width), height_(height), pixels_(3 * width * height) {
    require(width > 0 && height > 0, "ImageRaster: dimensions must be positive");
    for (std::size_t i = 0; i < width * height; ++i) std::copy(fill.begin(), fill.end(), pixels_.begin() + 3 * i);
}

Rgb ImageRaster::get(std::size_t x, std::size_t y) const {
    require(x < width_ && y < height_, "ImageRaster: pixel out of range");
    const std::size_t i = 3 * (y * width_ + x);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void ImageRaster::set(std::size_t x, std::size_t y, Rgb color) {
    require(x < width_ && y < height_, "ImageRaster: pixel out of range");
    std::copy(color.begin(), color.end(), pixels_.begin() + 3 * (y * width_ + x));
}

void write_ppm(std::ostream& out, const ImageRaster& image) {
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    const auto px = image.pixels();
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void save_ppm(const std::filesystem::path& path, const ImageRaster& image) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "save_ppm: cannot open " + path.string());
    write_ppm(out, image);
    require(static_cast<bool>(out), "save_ppm: write failed for " + path.string());
}

ImageRaster read_ppm(std::istream& in) {
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    require(in && magic == "P6" && maxval == 255, "read_ppm: expected a P6 header with maxval 255");
    in.get();
    ImageRaster image(width, height);
    std::vector<char> bytes(3 * width * height);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(in.gcount() == static_cast<std::streamsize>(bytes.size()), "read_ppm: truncated pixel data");
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t i = 3 * (y * width + x);
            image.set(x, y,
                      {static_cast<std::uint8_t>(bytes[i]), static_cast<std::uint8_t>(bytes[i + 1]),
                       static_cast<std::uint8_t>(bytes[i + 2])});
        }
    }
    return image;
}

ImageRaster load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "load_ppm: cannot open " + path.string());
    return read_ppm(in);
}

void Grid::validate() const {
    require(width >= 16 && height >= 16, "Grid: resolution must be at least 16x16");
    require(x_max > x_min && y_max > y_min, "Grid: bounds must be non-empty");
}

Tensor Grid::centers() const {
    Tensor out({width * height, 2});
    const double dx = cell_width(), dy = cell_height();
    for (std::size_t row = 0; row < height; ++row) {
        for (std::size_t col = 0; col < width; ++col) {
            const std::size_t i = row * width + col;
            out.at(i, 0) = x_min + (static_cast<double>(col) + 0.5) * dx;
            out.at(i, 1) = y_max - (static_cast<double>(row) + 0.5) * dy;
        }
    }
    return out;
}

std::optional<std::array<std::size_t, 2>> Grid::cell_of(double x, double y) const {
    if (x < x_min || x > x_max || y < y_min || y > y_max) return std::nullopt;
    const auto col = std::min(width - 1, static_cast<std::size_t>((x - x_min) / cell_width()));
    const auto row = std::min(height - 1, static_cast<std::size_t>((y_max - y) / cell_height()));
    return std::array<std::size_t, 2>{col, row};
}

Grid grid_around(std::span<const data::LabeledSet2D* const> sets, double padding, std::size_t resolution) {
    require(!sets.empty(), "grid_around: need at least one set");
    double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
    for (const auto* set : sets) {
        for (std::size_t r = 0; r < set->points.rows(); ++r) {
            x_lo = std::min(x_lo, set->points.at(r, 0));
            x_hi = std::max(x_hi, set->points.at(r, 0));
            y_lo = std::min(y_lo, set->points.at(r, 1));
            y_hi = std::max(y_hi, set->points.at(r, 1));
        }
    }
    const double pad_x = padding * std::max(x_hi - x_lo, 1e-9);
    const double pad_y = padding * std::max(y_hi - y_lo, 1e-9);
    Grid grid{x_lo - pad_x, x_hi + pad_x, y_lo - pad_y, y_hi + pad_y, resolution, resolution};
    grid.validate();
    return grid;
}

namespace {

const nn::Mlp& head_net(const adr::ModelBundle& bundle, adr::Head head) {
    return head == adr::Head::critic ? bundle.critic : bundle.aux_classifier;
}

}  // namespace

std::size_t last_hidden_width(const adr::ModelBundle& bundle, adr::Head head) {
    const auto& layers = head_net(bundle, head).spec.layers;
    require(layers.size() >= 2, "last_hidden_width: head has no hidden layer");
    return layers[layers.size() - 2].width;
}

std::vector<std::size_t> region_labels(const adr::ModelBundle& bundle, const Grid& grid, adr::Head head,
                                       const Tensor* probe_mask) {
    grid.validate();
    const Tensor points = grid.centers();
    if (!probe_mask) return adr::argmax_rows(adr::predict_probs(bundle, points, head));

    const Tensor features = nn::predict_logits(bundle.generator, points);
    const nn::Mlp& net = head_net(bundle, head);
    Tape tape;
    const auto vars = nn::bind(tape, net.params);
    nn::BatchNormState bn = net.bn;
    const Var logits = nn::mlp_forward(net.spec, vars, bn, tape.leaf(features), {.probe_mask = probe_mask}).output;
    return adr::argmax_rows(softmax(logits).value());
}

Rgb region_color(std::size_t label) {
    static constexpr Rgb palette[] = {kYellow, kCyan, {255, 170, 220}, {200, 170, 255}, {255, 200, 140}};
    return palette[label % std::size(palette)];
}

namespace {

void stamp(ImageRaster& image, const Grid& grid, double x, double y, Rgb color) {
    const auto cell = grid.cell_of(x, y);
    if (!cell) return;
    const auto [col, row] = *cell;
    for (std::size_t py = row == 0 ? 0 : row - 1; py <= std::min(image.height() - 1, row + 1); ++py) {
        for (std::size_t px = col == 0 ? 0 : col - 1; px <= std::min(image.width() - 1, col + 1); ++px) {
            image.set(px, py, color);
        }
    }
}

}  // namespace

ImageRaster paint(const Grid& grid, std::span<const std::size_t> labels, const Overlay& overlay) {
    grid.validate();
    require(labels.size() == grid.width * grid.height, "paint: one label per grid cell expected");
    ImageRaster image(grid.width, grid.height);
    for (std::size_t row = 0; row < grid.height; ++row) {
        for (std::size_t col = 0; col < grid.width; ++col) image.set(col, row, region_color(labels[row * grid.width + col]));
    }
    if (overlay.target) {
        for (std::size_t i = 0; i < overlay.target->size(); ++i) {
            stamp(image, grid, overlay.target->points.at(i, 0), overlay.target->points.at(i, 1), kBlack);
        }
    }
    if (overlay.source) {
        for (std::size_t i = 0; i < overlay.source->size(); ++i) {
            stamp(image, grid, overlay.source->points.at(i, 0), overlay.source->points.at(i, 1),
                  overlay.source->labels[i] == 0 ? kRed : kGreen);
        }
    }
    return image;
}

ImageRaster rasterize_boundary(const adr::ModelBundle& bundle, const Grid& grid, const Overlay& overlay,
                               adr::Head head) {
    return paint(grid, region_labels(bundle, grid, head), overlay);
}

ImageRaster per_neuron_boundary(const adr::ModelBundle& bundle, std::size_t neuron, const Grid& grid,
                                const Overlay& overlay, adr::Head head) {
    const std::size_t width = last_hidden_width(bundle, head);
    if (neuron >= width) {
        throw ContractError("per_neuron_boundary: neuron " + std::to_string(neuron) + " out of range for width " +
                            std::to_string(width));
    }
    Tensor mask({width}, 0.0);
    mask[neuron] = 1.0;
    return paint(grid, region_labels(bundle, grid, head, &mask), overlay);
}

GridAgreement grid_agreement(const Grid& grid, std::span<const std::size_t> labels, const data::LabeledSet2D& set) {
    require(labels.size() == grid.width * grid.height, "grid_agreement: one label per grid cell expected");
    require(set.size() > 0, "grid_agreement: empty set");
    std::size_t agree = 0, near_boundary = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto cell = grid.cell_of(set.points.at(i, 0), set.points.at(i, 1));
        if (!cell) {
            ++near_boundary;
            continue;
        }
        const auto [col, row] = *cell;
        const std::size_t own = labels[row * grid.width + col];
        agree += own == set.labels[i] ? 1 : 0;
        bool mixed = false;
        for (std::size_t r = row == 0 ? 0 : row - 1; r <= std::min(grid.height - 1, row + 1); ++r) {
            for (std::size_t c = col == 0 ? 0 : col - 1; c <= std::min(grid.width - 1, col + 1); ++c) {
                mixed = mixed || labels[r * grid.width + c] != own;
            }
        }
        near_boundary += mixed ? 1 : 0;
    }
    const double n = static_cast<double>(set.size());
    return {static_cast<double>(agree) / n, static_cast<double>(near_boundary) / n};
}

}  // namespace adrlab::render
