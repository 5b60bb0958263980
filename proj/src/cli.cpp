#include "adrlab/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "adrlab/checkpoint.hpp"
#include "adrlab/errors.hpp"
#include "adrlab/gradsuite.hpp"

namespace adrlab::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSubcommandNames[] = {"adapt-adr", "adapt-ent", "adapt-source-only",
                                            "gan-ssl",   "gradcheck", "render-boundary"};

bool is_adapt(Subcommand sub) {
    return sub == Subcommand::adapt_adr || sub == Subcommand::adapt_ent || sub == Subcommand::adapt_source_only;
}

adr::Method method_of(Subcommand sub) {
    switch (sub) {
        case Subcommand::adapt_ent: return adr::Method::ent;
        case Subcommand::adapt_source_only: return adr::Method::source_only;
        default: return adr::Method::adr;
    }
}

std::string seed_dir_name(std::uint64_t seed) {
    return "seed_" + std::to_string(seed);
}

}  // namespace

std::string to_string(Subcommand sub) {
    return kSubcommandNames[static_cast<std::size_t>(sub)];
}

Subcommand subcommand_from_string(const std::string& name) {
    for (std::size_t i = 0; i < std::size(kSubcommandNames); ++i) {
        if (name == kSubcommandNames[i]) return static_cast<Subcommand>(i);
    }
    throw ContractError("unknown subcommand '" + name + "'");
}

void CliConfig::validate() const {
    require(!seeds.empty(), "at least one seed is required");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
    require(render.resolution >= 16, "resolution must be at least 16");
    require(render.padding >= 0.0, "padding must be non-negative");
    if (is_adapt(subcommand)) {
        adr::AdrConfig c = adr;
        c.method = method_of(subcommand);
        c.validate();
        require(moons.n_per_domain >= 2, "n_per_domain must be at least 2");
        require(moons.noise_std >= 0.0, "noise_std must be non-negative");
        require(std::max(adr.batch_size_source, adr.batch_size_target) <= moons.n_per_domain,
                "batch sizes must not exceed n_per_domain");
    } else if (subcommand == Subcommand::gan_ssl) {
        gan.validate();
    } else if (subcommand == Subcommand::gradcheck) {
        require(gradcheck.instances >= 1, "gradcheck instances must be at least 1");
        require(gradcheck.step > 0.0 && gradcheck.rel_tol > 0.0 && gradcheck.abs_floor >= 0.0,
                "gradcheck step and tolerances must be positive");
    } else {
        require(!run_dir.empty(), "render-boundary needs --run");
    }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

/// Strict reader: every key of `json` must be consumed.
class Reader {
public:
    Reader(const Json& json, std::string context) : json_(json), context_(std::move(context)) {
        require(json.is_object(), context_ + ": expected a JSON object");
    }

    template <class T>
    void get(const std::string& key, T& value) {
        const auto it = json_.find(key);
        if (it == json_.end()) return;
        seen_.insert(key);
        try {
            value = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ContractError(context_ + "." + key + ": wrong type");
        }
    }

    template <class Enum>
    void get_enum(const std::string& key, Enum& value, Enum (*parse)(const std::string&)) {
        std::string name;
        const bool present = json_.contains(key);
        get(key, name);
        if (present) value = parse(name);
    }

    const Json* child(const std::string& key) {
        const auto it = json_.find(key);
        if (it == json_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (const auto& [key, _] : json_.items()) {
            if (!seen_.contains(key)) throw ContractError(context_ + ": unknown key '" + key + "'");
        }
    }

private:
    const Json& json_;
    std::string context_;
    std::set<std::string> seen_;
};

Json adr_json(const adr::AdrConfig& c) {
    return Json{{"dropout_rate", c.dropout_rate},
                {"n_step3_repeats", c.n_step3_repeats},
                {"learning_rate", c.learning_rate},
                {"optimizer", nn::to_string(c.optimizer)},
                {"batch_size_source", c.batch_size_source},
                {"batch_size_target", c.batch_size_target},
                {"total_outer_iterations", c.total_outer_iterations},
                {"entropy_term_variant", adr::to_string(c.entropy_term_variant)},
                {"eval_interval", c.eval_interval},
                {"generator_widths", c.generator_widths},
                {"classifier_widths", c.classifier_widths}};
}

void read_adr(const Json& json, adr::AdrConfig& c) {
    Reader r(json, "adr");
    r.get("dropout_rate", c.dropout_rate);
    r.get("n_step3_repeats", c.n_step3_repeats);
    r.get("learning_rate", c.learning_rate);
    r.get_enum("optimizer", c.optimizer, &nn::optimizer_kind_from_string);
    r.get("batch_size_source", c.batch_size_source);
    r.get("batch_size_target", c.batch_size_target);
    r.get("total_outer_iterations", c.total_outer_iterations);
    r.get_enum("entropy_term_variant", c.entropy_term_variant, &adr::balance_variant_from_string);
    r.get("eval_interval", c.eval_interval);
    r.get("generator_widths", c.generator_widths);
    r.get("classifier_widths", c.classifier_widths);
    r.finish();
}

Json moons_json(const data::MoonsConfig& c) {
    return Json{{"n_per_domain", c.n_per_domain}, {"noise_std", c.noise_std}, {"rotation_degrees", c.rotation_degrees}};
}

void read_moons(const Json& json, data::MoonsConfig& c) {
    Reader r(json, "moons");
    r.get("n_per_domain", c.n_per_domain);
    r.get("noise_std", c.noise_std);
    r.get("rotation_degrees", c.rotation_degrees);
    r.finish();
}

Json render_json(const RenderConfig& c) {
    return Json{{"head", adr::to_string(c.head)}, {"resolution", c.resolution}, {"padding", c.padding}};
}

void read_render(const Json& json, RenderConfig& c) {
    Reader r(json, "render");
    r.get_enum("head", c.head, &adr::head_from_string);
    r.get("resolution", c.resolution);
    r.get("padding", c.padding);
    r.finish();
}

Json gan_json(const gan::GanConfig& c) {
    return Json{{"num_classes", c.mixture.num_classes},
                {"n_labeled_per_class", c.mixture.n_labeled_per_class},
                {"n_unlabeled", c.mixture.n_unlabeled},
                {"separation", c.mixture.separation},
                {"noise_std", c.mixture.noise_std},
                {"n_test", c.n_test},
                {"z_dim", c.z_dim},
                {"generator_hidden", c.generator_hidden},
                {"critic_hidden", c.critic_hidden},
                {"feature_layer", c.feature_layer},
                {"dropout_rate", c.dropout_rate},
                {"critic_learning_rate", c.critic_learning_rate},
                {"generator_learning_rate", c.generator_learning_rate},
                {"optimizer", nn::to_string(c.optimizer)},
                {"batch_size_labeled", c.batch_size_labeled},
                {"batch_size_unlabeled", c.batch_size_unlabeled},
                {"batch_size_fake", c.batch_size_fake},
                {"total_iterations", c.total_iterations},
                {"eval_interval", c.eval_interval},
                {"balance_variant", adr::to_string(c.balance_variant)},
                {"use_adversarial", c.use_adversarial},
                {"use_balance", c.use_balance},
                {"flip_adversarial_signs", c.flip_adversarial_signs},
                {"use_aux_head", c.use_aux_head}};
}

void read_gan(const Json& json, gan::GanConfig& c) {
    Reader r(json, "gan");
    r.get("num_classes", c.mixture.num_classes);
    r.get("n_labeled_per_class", c.mixture.n_labeled_per_class);
    r.get("n_unlabeled", c.mixture.n_unlabeled);
    r.get("separation", c.mixture.separation);
    r.get("noise_std", c.mixture.noise_std);
    r.get("n_test", c.n_test);
    r.get("z_dim", c.z_dim);
    r.get("generator_hidden", c.generator_hidden);
    r.get("critic_hidden", c.critic_hidden);
    r.get("feature_layer", c.feature_layer);
    r.get("dropout_rate", c.dropout_rate);
    r.get("critic_learning_rate", c.critic_learning_rate);
    r.get("generator_learning_rate", c.generator_learning_rate);
    r.get_enum("optimizer", c.optimizer, &nn::optimizer_kind_from_string);
    r.get("batch_size_labeled", c.batch_size_labeled);
    r.get("batch_size_unlabeled", c.batch_size_unlabeled);
    r.get("batch_size_fake", c.batch_size_fake);
    r.get("total_iterations", c.total_iterations);
    r.get("eval_interval", c.eval_interval);
    r.get_enum("balance_variant", c.balance_variant, &adr::balance_variant_from_string);
    r.get("use_adversarial", c.use_adversarial);
    r.get("use_balance", c.use_balance);
    r.get("flip_adversarial_signs", c.flip_adversarial_signs);
    r.get("use_aux_head", c.use_aux_head);
    r.finish();
}

Json gradcheck_json(const GradcheckConfig& c) {
    return Json{{"instances", c.instances}, {"step", c.step}, {"rel_tol", c.rel_tol}, {"abs_floor", c.abs_floor}};
}

void read_gradcheck(const Json& json, GradcheckConfig& c) {
    Reader r(json, "gradcheck");
    r.get("instances", c.instances);
    r.get("step", c.step);
    r.get("rel_tol", c.rel_tol);
    r.get("abs_floor", c.abs_floor);
    r.finish();
}

}  // namespace

Json resolved_config(const CliConfig& config, std::uint64_t seed) {
    Json json{{"subcommand", to_string(config.subcommand)}};
    if (config.subcommand != Subcommand::render_boundary) json["seed"] = seed;
    if (is_adapt(config.subcommand)) {
        json["adr"] = adr_json(config.adr);
        json["moons"] = moons_json(config.moons);
        json["retrain_cprime_iterations"] = config.retrain_cprime_iterations;
        json["render"] = render_json(config.render);
    } else if (config.subcommand == Subcommand::gan_ssl) {
        json["gan"] = gan_json(config.gan);
        json["n_samples"] = config.n_samples;
        json["with_baseline"] = config.with_baseline;
    } else if (config.subcommand == Subcommand::gradcheck) {
        json["gradcheck"] = gradcheck_json(config.gradcheck);
    } else {
        json["run"] = config.run_dir.string();
        json["render"] = render_json(config.render);
    }
    return json;
}

std::optional<std::uint64_t> apply_config_json(CliConfig& config, const Json& json) {
    Reader r(json, "config");
    std::string sub;
    r.get("subcommand", sub);
    require(!sub.empty(), "config: missing subcommand");
    require(subcommand_from_string(sub) == config.subcommand,
            "config: recorded subcommand '" + sub + "' does not match '" + to_string(config.subcommand) + "'");
    std::optional<std::uint64_t> seed;
    if (json.contains("seed")) {
        std::uint64_t s = 0;
        r.get("seed", s);
        seed = s;
    }
    if (is_adapt(config.subcommand)) {
        if (const auto* j = r.child("adr")) read_adr(*j, config.adr);
        if (const auto* j = r.child("moons")) read_moons(*j, config.moons);
        if (const auto* j = r.child("render")) read_render(*j, config.render);
        r.get("retrain_cprime_iterations", config.retrain_cprime_iterations);
    } else if (config.subcommand == Subcommand::gan_ssl) {
        if (const auto* j = r.child("gan")) read_gan(*j, config.gan);
        r.get("n_samples", config.n_samples);
        r.get("with_baseline", config.with_baseline);
    } else if (config.subcommand == Subcommand::gradcheck) {
        if (const auto* j = r.child("gradcheck")) read_gradcheck(*j, config.gradcheck);
    } else {
        std::string run;
        r.get("run", run);
        if (!run.empty()) config.run_dir = run;
        if (const auto* j = r.child("render")) read_render(*j, config.render);
    }
    r.finish();
    return seed;
}

Json to_json(const adr::TrainMetricsRecord& r) {
    return Json{{"outer_iteration", r.outer_iteration},
                {"loss_cls_source", r.loss_cls_source},
                {"sensitivity_target", r.sensitivity_target},
                {"sensitivity_source", r.sensitivity_source},
                {"acc_C_target", r.acc_C_target},
                {"acc_Cprime_target", r.acc_Cprime_target},
                {"acc_C_source", r.acc_C_source},
                {"mean_target_entropy", r.mean_target_entropy}};
}

Json to_json(const gan::GanMetricsRecord& r) {
    Json json{{"iteration", r.iteration},
              {"test_accuracy", r.test_accuracy},
              {"test_error", r.test_error},
              {"labeled_loss", r.labeled_loss},
              {"adv_unlabeled", r.adv_unlabeled},
              {"adv_fake", r.adv_fake},
              {"feature_matching", r.feature_matching}};
    json["aux_test_accuracy"] = r.aux_test_accuracy ? Json(*r.aux_test_accuracy) : Json(nullptr);
    return json;
}

double median(std::vector<double> values) {
    require(!values.empty(), "median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_ndjson(const fs::path& path, std::span<const Json> records) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot open " + path.string());
    for (const auto& record : records) out << record.dump() << '\n';
    require(static_cast<bool>(out), "write failed for " + path.string());
}

std::vector<Json> read_ndjson(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    std::vector<Json> records;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) records.push_back(Json::parse(line));
    }
    return records;
}

void write_json(const fs::path& path, const Json& json) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot open " + path.string());
    out << json.dump(2) << '\n';
    require(static_cast<bool>(out), "write failed for " + path.string());
}

Json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(path.string() + ": " + e.what());
    }
}

BoundaryReport render_boundaries(const adr::ModelBundle& bundle, const data::DomainPair& domains,
                                 const RenderConfig& render, const fs::path& dir) {
    const data::LabeledSet2D* sets[] = {&domains.source, &domains.target};
    const render::Grid grid = render::grid_around(sets, render.padding, render.resolution);
    const render::Overlay overlay{&domains.source, &domains.target};

    BoundaryReport report;
    const auto labels = render::region_labels(bundle, grid, render.head);
    render::save_ppm(dir / "boundary_all.ppm", render::paint(grid, labels, overlay));
    report.images.push_back("boundary_all.ppm");
    for (std::size_t i = 0; i < render::last_hidden_width(bundle, render.head); ++i) {
        const std::string name = "boundary_neuron_" + std::to_string(i) + ".ppm";
        render::save_ppm(dir / name, render::per_neuron_boundary(bundle, i, grid, overlay, render.head));
        report.images.push_back(name);
    }
    report.evaluate_accuracy = adr::evaluate(bundle, domains.target, render.head).accuracy;
    report.target = render::grid_agreement(grid, labels, domains.target);
    return report;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

Json boundary_json(const BoundaryReport& report, const RenderConfig& render) {
    return Json{{"head", adr::to_string(render.head)},
                {"resolution", render.resolution},
                {"evaluate_accuracy", report.evaluate_accuracy},
                {"grid_agreement", report.target.agreement},
                {"boundary_fraction", report.target.boundary_fraction},
                {"images", report.images}};
}

/// Medians of every numeric field of the `key` object over `runs`, skipping diverged runs.
Json medians(const std::vector<Json>& runs, const std::string& key) {
    Json out = Json::object();
    std::vector<const Json*> finals;
    for (const auto& run : runs) {
        if (!run["diverged"].get<bool>() && run.contains(key)) finals.push_back(&run[key]);
    }
    if (finals.empty()) return out;
    for (const auto& [field, value] : finals.front()->items()) {
        if (!value.is_number_float()) continue;
        std::vector<double> values;
        for (const auto* f : finals) {
            if ((*f)[field].is_number()) values.push_back((*f)[field].get<double>());
        }
        out[field] = median(values);
    }
    return out;
}

adr::ModelBundle bundle_from_checkpoint(const nn::Checkpoint& ckpt, const adr::AdrConfig& config) {
    adr::ModelBundle bundle;
    bundle.generator = nn::mlp_from_checkpoint(ckpt, "G", nn::feature_extractor_spec(config.generator_widths));
    bundle.critic = nn::mlp_from_checkpoint(ckpt, "C", nn::classifier_spec(config.classifier_widths));
    bundle.aux_classifier = nn::mlp_from_checkpoint(ckpt, "Cprime", nn::classifier_spec(config.classifier_widths));
    return bundle;
}

int run_adapt(const CliConfig& config, std::ostream& out, std::ostream& err) {
    int status = 0;
    std::vector<Json> runs;
    for (const auto seed : config.seeds) {
        const fs::path dir = config.out_dir / seed_dir_name(seed);
        fs::create_directories(dir);
        write_json(dir / "config.json", resolved_config(config, seed));

        adr::AdrConfig adr_config = config.adr;
        adr_config.method = method_of(config.subcommand);
        adr_config.seed = seed;
        data::MoonsConfig moons = config.moons;
        moons.seed = seed;
        const auto domains = data::make_moons_domains(moons);
        const data::LabeledSet2D* sets[] = {&domains.source, &domains.target};
        const std::string names[] = {"source", "target"};
        data::write_points_csv(dir / "data.csv", sets, names);

        auto result = adr::train(adr_config, domains.source, domains.target);
        std::vector<Json> records;
        for (const auto& r : result.metrics) records.push_back(to_json(r));
        write_ndjson(dir / "metrics.ndjson", records);

        Json run{{"seed", seed}, {"dir", seed_dir_name(seed)}, {"diverged", result.diverged}};
        if (result.diverged) {
            err << "seed " << seed << ": training diverged: " << result.diagnostic << '\n';
            run["diagnostic"] = result.diagnostic;
            status = 1;
            runs.push_back(std::move(run));
            continue;
        }
        if (config.retrain_cprime_iterations > 0) {
            adr::retrain_aux_classifier(result.bundle, adr_config, domains.source, config.retrain_cprime_iterations,
                                        Rng(seed).split(0x72657472));
        }
        nn::Checkpoint ckpt;
        nn::add_to_checkpoint(ckpt, "G", result.bundle.generator);
        nn::add_to_checkpoint(ckpt, "C", result.bundle.critic);
        nn::add_to_checkpoint(ckpt, "Cprime", result.bundle.aux_classifier);
        nn::save_checkpoint(dir / "checkpoint.txt", ckpt);

        const auto report = render_boundaries(result.bundle, domains, config.render, dir);
        write_json(dir / "boundary.json", boundary_json(report, config.render));

        Json final = records.back();
        if (config.retrain_cprime_iterations > 0) {
            final["acc_Cprime_target_retrained"] =
                adr::evaluate(result.bundle, domains.target, adr::Head::aux).accuracy;
        }
        run["final"] = final;
        run["boundary"] = Json{{"grid_agreement", report.target.agreement},
                               {"boundary_fraction", report.target.boundary_fraction},
                               {"evaluate_accuracy", report.evaluate_accuracy}};
        out << to_string(config.subcommand) << " seed " << seed << ": acc_Cprime_target "
            << final["acc_Cprime_target"].get<double>() << ", acc_C_target " << final["acc_C_target"].get<double>()
            << '\n';
        runs.push_back(std::move(run));
    }
    Json summary{{"subcommand", to_string(config.subcommand)}, {"seeds", config.seeds}, {"runs", runs},
                 {"median", medians(runs, "final")}};
    write_json(config.out_dir / "summary.json", summary);
    return status;
}

int run_gan(const CliConfig& config, std::ostream& out, std::ostream& err) {
    int status = 0;
    std::vector<Json> runs;
    for (const auto seed : config.seeds) {
        const fs::path dir = config.out_dir / seed_dir_name(seed);
        fs::create_directories(dir);
        write_json(dir / "config.json", resolved_config(config, seed));

        gan::GanConfig gan_config = config.gan;
        gan_config.seed = seed;
        const auto data = gan::make_gan_data(gan_config);
        const data::LabeledSet2D* sets[] = {&data.train.labeled, &data.test};
        const std::string names[] = {"labeled", "test"};
        data::write_points_csv(dir / "data.csv", sets, names);

        auto result = gan::train_gan_ssl(gan_config, data.train.labeled, data.train.unlabeled, data.test);
        std::vector<Json> records;
        for (const auto& r : result.metrics) records.push_back(to_json(r));
        write_ndjson(dir / "metrics.ndjson", records);

        Json run{{"seed", seed}, {"dir", seed_dir_name(seed)}, {"diverged", result.diverged}};
        if (result.diverged) {
            err << "seed " << seed << ": training diverged: " << result.diagnostic << '\n';
            run["diagnostic"] = result.diagnostic;
            status = 1;
        } else {
            nn::Checkpoint ckpt;
            nn::add_to_checkpoint(ckpt, "G", result.bundle.generator);
            nn::add_to_checkpoint(ckpt, "C", result.bundle.critic);
            if (result.bundle.aux_head) nn::add_to_checkpoint(ckpt, "Caux", *result.bundle.aux_head);
            nn::save_checkpoint(dir / "checkpoint.txt", ckpt);
            Rng sample_rng = Rng(seed).split(0x73616d70);
            gan::write_samples_csv(dir / "samples.csv", gan::generate(result.bundle, config.n_samples, sample_rng));
            run["final"] = records.back();
        }

        if (config.with_baseline) {
            const auto baseline = gan::train_labeled_only(gan_config, data.train.labeled, data.test);
            std::vector<Json> base_records;
            for (const auto& r : baseline.metrics) base_records.push_back(to_json(r));
            write_ndjson(dir / "baseline_metrics.ndjson", base_records);
            if (baseline.diverged) {
                err << "seed " << seed << ": baseline diverged: " << baseline.diagnostic << '\n';
                status = 1;
            } else {
                run["baseline_final"] = base_records.back();
            }
        }
        if (!result.diverged) {
            out << "gan-ssl seed " << seed << ": test_error " << run["final"]["test_error"].get<double>();
            if (run.contains("baseline_final")) {
                out << ", baseline test_error " << run["baseline_final"]["test_error"].get<double>();
            }
            out << '\n';
        }
        runs.push_back(std::move(run));
    }
    Json summary{{"subcommand", "gan-ssl"}, {"seeds", config.seeds}, {"runs", runs},
                 {"median", medians(runs, "final")}};
    if (config.with_baseline) summary["baseline_median"] = medians(runs, "baseline_final");
    write_json(config.out_dir / "summary.json", summary);
    return status;
}

int run_gradcheck(const CliConfig& config, std::ostream& out) {
    const GradCheckOptions options{config.gradcheck.step, config.gradcheck.rel_tol, config.gradcheck.abs_floor};
    bool passed = true;
    std::vector<Json> runs;
    for (const auto seed : config.seeds) {
        Json cases = Json::array();
        for (const auto& entry : run_grad_suite(config.gradcheck.instances, seed, options)) {
            out << (entry.passed() ? "PASS " : "FAIL ") << entry.name << " seed " << seed << " instances "
                << entry.instances << " failures " << entry.failures << " max_rel_err " << entry.max_rel_err << '\n';
            passed = passed && entry.passed();
            cases.push_back(Json{{"name", entry.name},
                                 {"instances", entry.instances},
                                 {"failures", entry.failures},
                                 {"max_rel_err", entry.max_rel_err},
                                 {"max_abs_err", entry.max_abs_err}});
        }
        runs.push_back(Json{{"seed", seed}, {"cases", cases}});
    }
    fs::create_directories(config.out_dir);
    write_json(config.out_dir / "gradcheck.json",
               Json{{"config", resolved_config(config, config.seeds.front())}, {"passed", passed}, {"runs", runs}});
    return passed ? 0 : 1;
}

int run_render(const CliConfig& config, std::ostream& out) {
    const Json json = read_json(config.run_dir / "config.json");
    const auto seed = json.at("seed").get<std::uint64_t>();
    data::MoonsConfig moons = config.moons;
    moons.seed = seed;
    const auto domains = data::make_moons_domains(moons);
    const auto bundle = bundle_from_checkpoint(nn::load_checkpoint(config.run_dir / "checkpoint.txt"), config.adr);
    const fs::path dir = config.out_dir.empty() ? config.run_dir : config.out_dir;
    fs::create_directories(dir);
    const auto report = render_boundaries(bundle, domains, config.render, dir);
    write_json(dir / "boundary.json", boundary_json(report, config.render));
    out << "render-boundary: " << report.images.size() << " images in " << dir.string() << ", grid agreement "
        << report.target.agreement << ", evaluate accuracy " << report.evaluate_accuracy << '\n';
    return 0;
}

}  // namespace

int run(const CliConfig& config, std::ostream& out, std::ostream& err) {
    try {
        config.validate();
    } catch (const std::logic_error& e) {
        err << "invalid config: " << e.what() << '\n';
        return 2;
    }
    try {
        if (config.subcommand != Subcommand::render_boundary) fs::create_directories(config.out_dir);
        if (is_adapt(config.subcommand)) return run_adapt(config, out, err);
        if (config.subcommand == Subcommand::gan_ssl) return run_gan(config, out, err);
        if (config.subcommand == Subcommand::gradcheck) return run_gradcheck(config, out);
        return run_render(config, out);
    } catch (const std::logic_error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

// ---------------------------------------------------------------------------
// Flags

namespace {

using Setter = std::function<void(CliConfig&)>;

class FlagSet {
public:
    explicit FlagSet(CLI::App* app) : app_(app) {}

    template <class T>
    void add(const std::string& name, const std::string& help, std::function<void(CliConfig&, const T&)> set) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app_->add_option("--" + name, *value, help);
        if constexpr (requires { value->push_back(value->front()); }) {
            opt->delimiter(',');
        }
        setters_.push_back([opt, value, set](CliConfig& c) {
            if (opt->count() > 0) set(c, *value);
        });
    }

    void apply(CliConfig& config) const {
        for (const auto& set : setters_) set(config);
    }

private:
    CLI::App* app_;
    std::vector<Setter> setters_;
};

template <class T>
std::function<void(CliConfig&, const T&)> assign(std::function<T&(CliConfig&)> field) {
    return [field](CliConfig& c, const T& v) { field(c) = v; };
}

template <class E>
std::function<void(CliConfig&, const std::string&)> assign_enum(std::function<E&(CliConfig&)> field,
                                                                 E (*parse)(const std::string&)) {
    return [field, parse](CliConfig& c, const std::string& v) { field(c) = parse(v); };
}

void add_render_flags(FlagSet& flags) {
    flags.add<std::string>("head", "boundary head: cprime (default) or c",
                           assign_enum<adr::Head>([](CliConfig& c) -> adr::Head& { return c.render.head; },
                                                  &adr::head_from_string));
    flags.add<std::size_t>("resolution", "boundary grid resolution per side (>= 16)",
                           assign<std::size_t>([](CliConfig& c) -> std::size_t& { return c.render.resolution; }));
    flags.add<double>("padding", "grid padding as a fraction of the data extent",
                      assign<double>([](CliConfig& c) -> double& { return c.render.padding; }));
}

void add_adapt_flags(FlagSet& flags) {
#define ADR_FLAG(T, name, field, help) \
    flags.add<T>(name, help, assign<T>([](CliConfig& c) -> T& { return c.field; }))
    ADR_FLAG(double, "dropout-rate", adr.dropout_rate, "dropout rate of the critic");
    ADR_FLAG(std::size_t, "n-step3-repeats", adr.n_step3_repeats, "generator updates per outer iteration");
    ADR_FLAG(double, "learning-rate", adr.learning_rate, "learning rate of every optimizer");
    ADR_FLAG(std::size_t, "batch-size-source", adr.batch_size_source, "source batch size");
    ADR_FLAG(std::size_t, "batch-size-target", adr.batch_size_target, "target batch size");
    ADR_FLAG(std::size_t, "total-outer-iterations", adr.total_outer_iterations, "outer training iterations");
    ADR_FLAG(std::size_t, "eval-interval", adr.eval_interval, "iterations between metric records");
    ADR_FLAG(std::vector<std::size_t>, "generator-widths", adr.generator_widths, "G widths, input first");
    ADR_FLAG(std::vector<std::size_t>, "classifier-widths", adr.classifier_widths, "C widths, feature width first");
    ADR_FLAG(std::size_t, "n-per-domain", moons.n_per_domain, "points per domain");
    ADR_FLAG(double, "noise-std", moons.noise_std, "moons noise standard deviation");
    ADR_FLAG(double, "rotation-degrees", moons.rotation_degrees, "target rotation in degrees");
    ADR_FLAG(std::size_t, "retrain-cprime-iterations", retrain_cprime_iterations,
             "re-train C' on frozen G for this many iterations after training");
#undef ADR_FLAG
    flags.add<std::string>("optimizer", "adam or sgd",
                           assign_enum<nn::OptimizerKind>(
                               [](CliConfig& c) -> nn::OptimizerKind& { return c.adr.optimizer; },
                               &nn::optimizer_kind_from_string));
    flags.add<std::string>("entropy-term-variant", "marginal or per_sample_literal",
                           assign_enum<adr::BalanceVariant>(
                               [](CliConfig& c) -> adr::BalanceVariant& { return c.adr.entropy_term_variant; },
                               &adr::balance_variant_from_string));
    add_render_flags(flags);
}

void add_gan_flags(FlagSet& flags) {
#define GAN_FLAG(T, name, field, help) \
    flags.add<T>(name, help, assign<T>([](CliConfig& c) -> T& { return c.field; }))
    GAN_FLAG(std::size_t, "num-classes", gan.mixture.num_classes, "mixture classes K");
    GAN_FLAG(std::size_t, "n-labeled-per-class", gan.mixture.n_labeled_per_class, "labeled points per class");
    GAN_FLAG(std::size_t, "n-unlabeled", gan.mixture.n_unlabeled, "unlabeled points");
    GAN_FLAG(double, "separation", gan.mixture.separation, "distance of class means from the origin");
    GAN_FLAG(double, "noise-std", gan.mixture.noise_std, "per-class standard deviation");
    GAN_FLAG(std::size_t, "n-test", gan.n_test, "test points");
    GAN_FLAG(std::size_t, "z-dim", gan.z_dim, "generator noise width");
    GAN_FLAG(std::vector<std::size_t>, "generator-hidden", gan.generator_hidden, "generator hidden widths");
    GAN_FLAG(std::vector<std::size_t>, "critic-hidden", gan.critic_hidden, "critic hidden widths");
    GAN_FLAG(std::size_t, "feature-layer", gan.feature_layer, "critic hidden layer used for feature matching");
    GAN_FLAG(double, "dropout-rate", gan.dropout_rate, "critic dropout rate");
    GAN_FLAG(double, "critic-learning-rate", gan.critic_learning_rate, "critic learning rate");
    GAN_FLAG(double, "generator-learning-rate", gan.generator_learning_rate, "generator learning rate");
    GAN_FLAG(std::size_t, "batch-size-labeled", gan.batch_size_labeled, "labeled batch size");
    GAN_FLAG(std::size_t, "batch-size-unlabeled", gan.batch_size_unlabeled, "unlabeled batch size");
    GAN_FLAG(std::size_t, "batch-size-fake", gan.batch_size_fake, "generated batch size");
    GAN_FLAG(std::size_t, "total-iterations", gan.total_iterations, "training iterations");
    GAN_FLAG(std::size_t, "eval-interval", gan.eval_interval, "iterations between metric records");
    GAN_FLAG(bool, "use-adversarial", gan.use_adversarial, "include the sensitivity terms");
    GAN_FLAG(bool, "use-balance", gan.use_balance, "include the class-balance term");
    GAN_FLAG(bool, "flip-adversarial-signs", gan.flip_adversarial_signs, "flip both sensitivity signs");
    GAN_FLAG(bool, "use-aux-head", gan.use_aux_head, "train a labeled-only head on the feature layer");
    GAN_FLAG(std::size_t, "n-samples", n_samples, "generator samples written to samples.csv");
    GAN_FLAG(bool, "with-baseline", with_baseline, "also train the labeled-only critic");
#undef GAN_FLAG
    flags.add<std::string>("optimizer", "adam or sgd",
                           assign_enum<nn::OptimizerKind>(
                               [](CliConfig& c) -> nn::OptimizerKind& { return c.gan.optimizer; },
                               &nn::optimizer_kind_from_string));
    flags.add<std::string>("balance-variant", "marginal or per_sample_literal",
                           assign_enum<adr::BalanceVariant>(
                               [](CliConfig& c) -> adr::BalanceVariant& { return c.gan.balance_variant; },
                               &adr::balance_variant_from_string));
}

void add_gradcheck_flags(FlagSet& flags) {
    flags.add<std::size_t>("instances", "random instances per case",
                           assign<std::size_t>([](CliConfig& c) -> std::size_t& { return c.gradcheck.instances; }));
    flags.add<double>("step", "finite-difference step",
                      assign<double>([](CliConfig& c) -> double& { return c.gradcheck.step; }));
    flags.add<double>("rel-tol", "relative tolerance",
                      assign<double>([](CliConfig& c) -> double& { return c.gradcheck.rel_tol; }));
    flags.add<double>("abs-floor", "absolute comparison floor",
                      assign<double>([](CliConfig& c) -> double& { return c.gradcheck.abs_floor; }));
}

struct SubcommandFlags {
    Subcommand sub;
    CLI::App* app;
    std::unique_ptr<FlagSet> flags;
    std::string out;
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    CLI::Option* seeds_opt = nullptr;
    std::string run_dir;
};

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Adversarial dropout regularization experiments", "adrlab"};
    app.require_subcommand(1);
    app.allow_extras(false);

    std::vector<std::unique_ptr<SubcommandFlags>> subs;
    for (std::size_t i = 0; i < std::size(kSubcommandNames); ++i) {
        auto s = std::make_unique<SubcommandFlags>();
        s->sub = static_cast<Subcommand>(i);
        const char* help = "";
        switch (s->sub) {
            case Subcommand::adapt_adr: help = "two-moons adaptation with dropout sensitivity"; break;
            case Subcommand::adapt_ent: help = "two-moons adaptation with the entropy adversary"; break;
            case Subcommand::adapt_source_only: help = "two-moons source-only training"; break;
            case Subcommand::gan_ssl: help = "semi-supervised GAN on a Gaussian mixture"; break;
            case Subcommand::gradcheck: help = "finite-difference gradient suite"; break;
            case Subcommand::render_boundary: help = "re-render boundary panels of a finished run"; break;
        }
        s->app = app.add_subcommand(kSubcommandNames[i], help);
        s->flags = std::make_unique<FlagSet>(s->app);
        s->app->add_option("--out", s->out, "output directory");
        if (s->sub == Subcommand::render_boundary) {
            s->app->add_option("--run", s->run_dir, "seed directory of an adaptation run")->required();
            add_render_flags(*s->flags);
        } else {
            s->app->add_option("--config", s->config_path, "config.json to start from");
            s->seeds_opt = s->app->add_option("--seeds", s->seeds, "comma-separated seed list")->delimiter(',');
            if (is_adapt(s->sub)) add_adapt_flags(*s->flags);
            if (s->sub == Subcommand::gan_ssl) add_gan_flags(*s->flags);
            if (s->sub == Subcommand::gradcheck) add_gradcheck_flags(*s->flags);
        }
        subs.push_back(std::move(s));
    }

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    const auto& s = **std::find_if(subs.begin(), subs.end(), [](const auto& x) { return x->app->parsed(); });
    CliConfig config;
    config.subcommand = s.sub;
    try {
        if (s.sub == Subcommand::render_boundary) {
            config.run_dir = s.run_dir;
            const Json recorded = read_json(config.run_dir / "config.json");
            config.subcommand = subcommand_from_string(recorded.at("subcommand").get<std::string>());
            require(is_adapt(config.subcommand), "render-boundary: " + config.run_dir.string() +
                                                     " is not an adaptation run");
            const auto seed = apply_config_json(config, recorded);
            config.seeds = {seed.value_or(0)};
            config.subcommand = Subcommand::render_boundary;
            config.out_dir = s.out;
        } else {
            std::optional<std::uint64_t> recorded_seed;
            if (!s.config_path.empty()) recorded_seed = apply_config_json(config, read_json(s.config_path));
            if (s.seeds_opt->count() > 0) {
                config.seeds = s.seeds;
            } else if (recorded_seed) {
                config.seeds = {*recorded_seed};
            }
            config.out_dir = s.out.empty() ? fs::path("runs") / kSubcommandNames[static_cast<std::size_t>(s.sub)]
                                           : fs::path(s.out);
        }
        s.flags->apply(config);
    } catch (const std::exception& e) {
        err << "invalid config: " << e.what() << '\n';
        return 2;
    }
    return run(config, out, err);
}

}  // namespace adrlab::cli
