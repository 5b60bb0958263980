#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adrlab/adr.hpp"
#include "adrlab/datasets.hpp"
#include "adrlab/ganssl.hpp"
#include "adrlab/raster.hpp"

namespace adrlab::cli {

using Json = nlohmann::ordered_json;

enum class Subcommand { adapt_adr, adapt_ent, adapt_source_only, gan_ssl, gradcheck, render_boundary };

std::string to_string(Subcommand sub);
Subcommand subcommand_from_string(const std::string& name);

struct RenderConfig {
    adr::Head head = adr::Head::aux;
    std::size_t resolution = 256;
    double padding = 0.2;
};

struct GradcheckConfig {
    std::size_t instances = 20;
    double step = 1e-5;
    double rel_tol = 1e-4;
    double abs_floor = 1e-8;
};

struct CliConfig {
    Subcommand subcommand = Subcommand::adapt_adr;
    std::filesystem::path out_dir;
    std::vector<std::uint64_t> seeds{0};

    adr::AdrConfig adr;
    data::MoonsConfig moons;
    /// Post-hoc re-training of C' on frozen G features; 0 keeps the concurrent C'.
    std::size_t retrain_cprime_iterations = 0;
    RenderConfig render;

    gan::GanConfig gan;
    /// Generator samples written to samples.csv per GAN run.
    std::size_t n_samples = 1000;
    /// Also trains the labeled-only critic and records its metrics.
    bool with_baseline = true;

    GradcheckConfig gradcheck;

    /// Seed directory of a finished adaptation run (render-boundary).
    std::filesystem::path run_dir;

    void validate() const;
};

/// The fully resolved configuration of one seed, as written to config.json.
Json resolved_config(const CliConfig& config, std::uint64_t seed);

/// Applies a config.json object on top of `config`. Unknown keys and a
/// subcommand other than `config.subcommand` are rejected. Returns the
/// recorded seed, if any.
std::optional<std::uint64_t> apply_config_json(CliConfig& config, const Json& json);

Json to_json(const adr::TrainMetricsRecord& record);
Json to_json(const gan::GanMetricsRecord& record);

/// Median of `values`; the mean of the two middle values for even sizes.
double median(std::vector<double> values);

/// One JSON object per line, no trailing whitespace.
void write_ndjson(const std::filesystem::path& path, std::span<const Json> records);
std::vector<Json> read_ndjson(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& json);
Json read_json(const std::filesystem::path& path);

struct BoundaryReport {
    double evaluate_accuracy = 0.0;
    render::GridAgreement target;
    std::vector<std::string> images;
};

/// Writes the combined panel (boundary_all.ppm) and one panel per neuron of
/// the head's last hidden layer (boundary_neuron_<i>.ppm) into `dir`.
BoundaryReport render_boundaries(const adr::ModelBundle& bundle, const data::DomainPair& domains,
                                 const RenderConfig& render, const std::filesystem::path& dir);

/// Parses `args` (without the program name) and runs the experiment.
/// Exit status: 0 success, 1 divergence or failed check, 2 usage error.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Runs an already parsed configuration.
int run(const CliConfig& config, std::ostream& out, std::ostream& err);

}  // namespace adrlab::cli
