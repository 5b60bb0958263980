#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "adrlab/adr.hpp"
#include "adrlab/datasets.hpp"

namespace adrlab::render {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kYellow{255, 255, 0};
inline constexpr Rgb kCyan{0, 255, 255};
inline constexpr Rgb kRed{255, 0, 0};
inline constexpr Rgb kGreen{0, 160, 0};
inline constexpr Rgb kBlack{0, 0, 0};

/// 8-bit RGB image, rows top to bottom.
class ImageRaster {
public:
    ImageRaster(std::size_t width, std::size_t height, Rgb fill = {255, 255, 255});

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

    Rgb get(std::size_t x, std::size_t y) const;
    void set(std::size_t x, std::size_t y, Rgb color);

    friend bool operator==(const ImageRaster&, const ImageRaster&) = default;

private:
    std::size_t width_;
    std::size_t height_;
    std::vector<std::uint8_t> pixels_;
};

/// Binary PPM: "P6\n<w> <h>\n255\n" followed by 3*w*h bytes.
void write_ppm(std::ostream& out, const ImageRaster& image);
void save_ppm(const std::filesystem::path& path, const ImageRaster& image);
ImageRaster read_ppm(std::istream& in);
ImageRaster load_ppm(const std::filesystem::path& path);

/// Axis-aligned sampling grid. Cell (col, row) covers
/// [x_min + col*dx, x_min + (col+1)*dx] x [y_max - (row+1)*dy, y_max - row*dy].
struct Grid {
    double x_min = -1.0;
    double x_max = 1.0;
    double y_min = -1.0;
    double y_max = 1.0;
    std::size_t width = 256;
    std::size_t height = 256;

    double cell_width() const { return (x_max - x_min) / static_cast<double>(width); }
    double cell_height() const { return (y_max - y_min) / static_cast<double>(height); }
    /// `[width * height, 2]` cell centers in row-major order.
    Tensor centers() const;
    /// Cell containing `(x, y)`, if inside the grid.
    std::optional<std::array<std::size_t, 2>> cell_of(double x, double y) const;
    void validate() const;
};

/// Bounding box of the sets, padded by `padding` times its extent on every side.
Grid grid_around(std::span<const data::LabeledSet2D* const> sets, double padding = 0.2, std::size_t resolution = 256);

/// Predicted class per grid cell (row-major), eval mode. `probe_mask`
/// keeps only the selected neurons of the head's last hidden layer.
std::vector<std::size_t> region_labels(const adr::ModelBundle& bundle, const Grid& grid, adr::Head head,
                                       const Tensor* probe_mask = nullptr);

Rgb region_color(std::size_t label);

struct Overlay {
    const data::LabeledSet2D* source = nullptr;
    const data::LabeledSet2D* target = nullptr;
};

ImageRaster paint(const Grid& grid, std::span<const std::size_t> labels, const Overlay& overlay = {});

ImageRaster rasterize_boundary(const adr::ModelBundle& bundle, const Grid& grid, const Overlay& overlay = {},
                               adr::Head head = adr::Head::aux);

/// Width of the head's last hidden layer.
std::size_t last_hidden_width(const adr::ModelBundle& bundle, adr::Head head);

/// Boundary with every neuron of the head's last hidden layer zeroed except `neuron`.
ImageRaster per_neuron_boundary(const adr::ModelBundle& bundle, std::size_t neuron, const Grid& grid,
                                const Overlay& overlay = {}, adr::Head head = adr::Head::aux);

struct GridAgreement {
    /// Fraction of points whose cell's predicted class equals their label.
    double agreement = 0.0;
    /// Fraction of points whose 3x3 cell neighbourhood holds more than one class.
    double boundary_fraction = 0.0;
};

GridAgreement grid_agreement(const Grid& grid, std::span<const std::size_t> labels, const data::LabeledSet2D& set);

}  // namespace adrlab::render
