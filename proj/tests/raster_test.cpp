#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "adrlab/errors.hpp"
#include "adrlab/raster.hpp"

namespace adrlab::render {
namespace {

adr::ModelBundle untrained_bundle(std::uint64_t seed) {
    Rng rng(seed);
    return adr::init_bundle(adr::AdrConfig{}, rng);
}

TEST(Ppm, PayloadSizeAndHeader) {
    const ImageRaster image(64, 64, kCyan);
    std::ostringstream out;
    write_ppm(out, image);
    const std::string bytes = out.str();
    const std::string header = "P6\n64 64\n255\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    EXPECT_EQ(bytes.size() - header.size(), 3u * 64u * 64u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 1]), 255);
}

TEST(Ppm, RoundTrip) {
    ImageRaster image(17, 5);
    for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 17; ++x) {
            image.set(x, y, {static_cast<std::uint8_t>(x * 13), static_cast<std::uint8_t>(y * 40), 10});
        }
    }
    std::stringstream buffer;
    write_ppm(buffer, image);
    EXPECT_EQ(read_ppm(buffer), image);
}

TEST(Ppm, RejectsOtherFormats) {
    std::stringstream p3("P3\n1 1\n255\n0 0 0\n");
    EXPECT_THROW(read_ppm(p3), ContractError);
    std::stringstream truncated("P6\n2 2\n255\nabc");
    EXPECT_THROW(read_ppm(truncated), ContractError);
}

TEST(ImageRaster, BufferIsThreeBytesPerPixel) {
    const ImageRaster image(7, 3);
    EXPECT_EQ(image.pixels().size(), 3u * 7u * 3u);
    EXPECT_THROW(image.get(7, 0), ContractError);
}

TEST(Grid, CentersAndCells) {
    const Grid grid{0.0, 4.0, 0.0, 2.0, 16, 16};
    const Tensor c = grid.centers();
    ASSERT_EQ(c.rows(), 256u);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 0.125);
    EXPECT_DOUBLE_EQ(c.at(0, 1), 2.0 - 0.0625);
    for (std::size_t i = 0; i < c.rows(); ++i) {
        const auto cell = grid.cell_of(c.at(i, 0), c.at(i, 1));
        ASSERT_TRUE(cell.has_value());
        EXPECT_EQ((*cell)[1] * 16 + (*cell)[0], i);
    }
    EXPECT_FALSE(grid.cell_of(-0.1, 1.0).has_value());
    EXPECT_THROW((Grid{0.0, 1.0, 0.0, 1.0, 8, 8}.validate()), ContractError);
}

TEST(Grid, AroundDataIsPaddedTwentyPercent) {
    data::LabeledSet2D set{Tensor::matrix(2, 2, {0.0, 0.0, 10.0, 5.0}), {0, 1}};
    const data::LabeledSet2D* sets[] = {&set};
    const Grid grid = grid_around(sets);
    EXPECT_DOUBLE_EQ(grid.x_min, -2.0);
    EXPECT_DOUBLE_EQ(grid.x_max, 12.0);
    EXPECT_DOUBLE_EQ(grid.y_min, -1.0);
    EXPECT_DOUBLE_EQ(grid.y_max, 6.0);
    EXPECT_EQ(grid.width, 256u);
}

TEST(RasterizeBoundary, ConstantModelGivesOneColor) {
    adr::ModelBundle bundle = untrained_bundle(1);
    // Zero output weights: every input gets the same logits, argmax ties go to class 0.
    for (auto& v : bundle.aux_classifier.params.mutable_at("l1.weight").data()) v = 0.0;
    const Grid grid{-1.0, 1.0, -1.0, 1.0, 32, 32};
    const ImageRaster image = rasterize_boundary(bundle, grid);
    for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) ASSERT_EQ(image.get(x, y), kYellow);
    }
}

TEST(RasterizeBoundary, OverlayColors) {
    adr::ModelBundle bundle = untrained_bundle(2);
    data::LabeledSet2D source{Tensor::matrix(2, 2, {-0.5, 0.5, 0.5, 0.5}), {0, 1}};
    data::LabeledSet2D target{Tensor::matrix(1, 2, {0.0, -0.5}), {0}};
    const Grid grid{-1.0, 1.0, -1.0, 1.0, 32, 32};
    const ImageRaster image = rasterize_boundary(bundle, grid, {&source, &target});
    const auto at = [&](double x, double y) {
        const auto cell = grid.cell_of(x, y);
        return image.get((*cell)[0], (*cell)[1]);
    };
    EXPECT_EQ(at(-0.5, 0.5), kRed);
    EXPECT_EQ(at(0.5, 0.5), kGreen);
    EXPECT_EQ(at(0.0, -0.5), kBlack);
}

TEST(PerNeuronBoundary, AllNeuronMaskMatchesCombined) {
    const adr::ModelBundle bundle = untrained_bundle(3);
    const Grid grid{-2.0, 2.0, -2.0, 2.0, 24, 24};
    const Tensor all({5}, 1.0);
    EXPECT_EQ(paint(grid, region_labels(bundle, grid, adr::Head::aux, &all)), rasterize_boundary(bundle, grid));
}

TEST(PerNeuronBoundary, OutOfRangeIsAContractError) {
    const adr::ModelBundle bundle = untrained_bundle(4);
    const Grid grid{-1.0, 1.0, -1.0, 1.0, 16, 16};
    EXPECT_EQ(last_hidden_width(bundle, adr::Head::aux), 5u);
    EXPECT_NO_THROW(per_neuron_boundary(bundle, 4, grid));
    EXPECT_THROW(per_neuron_boundary(bundle, 5, grid), ContractError);
}

TEST(PerNeuronBoundary, DistinctNeuronsGiveDistinctPanels) {
    const auto domains = data::make_moons_domains({});
    adr::AdrConfig config;
    config.total_outer_iterations = 300;
    const auto result = adr::train(config, domains.source, domains.target);
    const data::LabeledSet2D* sets[] = {&domains.source, &domains.target};
    const Grid grid = grid_around(sets, 0.2, 64);
    std::size_t differing_pairs = 0;
    std::vector<ImageRaster> images;
    for (std::size_t i = 0; i < 5; ++i) images.push_back(per_neuron_boundary(result.bundle, i, grid));
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = i + 1; j < 5; ++j) differing_pairs += images[i] == images[j] ? 0 : 1;
    }
    EXPECT_GE(differing_pairs, 1u);
}

TEST(GridAgreement, MatchesEvaluateWithinBoundaryCells) {
    const auto domains = data::make_moons_domains({});
    adr::AdrConfig config;
    config.total_outer_iterations = 300;
    const auto result = adr::train(config, domains.source, domains.target);
    const data::LabeledSet2D* sets[] = {&domains.source, &domains.target};
    const Grid grid = grid_around(sets);
    const auto labels = region_labels(result.bundle, grid, adr::Head::aux);
    const GridAgreement g = grid_agreement(grid, labels, domains.target);
    const double accuracy = adr::evaluate(result.bundle, domains.target, adr::Head::aux).accuracy;
    EXPECT_LE(std::abs(g.agreement - accuracy), g.boundary_fraction);
}

TEST(GridAgreement, PerfectOnHomogeneousRegion) {
    const Grid grid{0.0, 1.0, 0.0, 1.0, 16, 16};
    const std::vector<std::size_t> labels(256, 1);
    data::LabeledSet2D set{Tensor::matrix(2, 2, {0.3, 0.3, 0.6, 0.7}), {1, 1}};
    const GridAgreement g = grid_agreement(grid, labels, set);
    EXPECT_EQ(g.agreement, 1.0);
    EXPECT_EQ(g.boundary_fraction, 0.0);
}

}  // namespace
}  // namespace adrlab::render
