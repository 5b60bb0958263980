#include "adrlab/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "adrlab/errors.hpp"

namespace adrlab::nn {

namespace {

constexpr const char* kMagic = "adrlab-checkpoint";
constexpr int kVersion = 1;

std::string hex_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_double(const std::string& token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw ContractError("checkpoint: bad number '" + token + "'");
    return v;
}

const Tensor& entry(const Checkpoint& ckpt, const std::string& key) {
    auto it = ckpt.find(key);
    if (it == ckpt.end()) throw ContractError("checkpoint: missing entry '" + key + "'");
    return it->second;
}

}  // namespace

void add_to_checkpoint(Checkpoint& ckpt, const std::string& prefix, const Mlp& net) {
    for (const auto& [name, value] : net.params) ckpt[prefix + ".param." + name] = value;
    for (const auto& [layer, stats] : net.bn) {
        const std::string base = prefix + ".bn." + layer;
        ckpt[base + ".running_mean"] = stats.running_mean;
        ckpt[base + ".running_var"] = stats.running_var;
        ckpt[base + ".momentum"] = Tensor::scalar(stats.momentum);
        ckpt[base + ".eps"] = Tensor::scalar(stats.eps);
    }
}

Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix, const MlpSpec& spec) {
    // Build the expected layout, then overwrite from the checkpoint so shapes are validated.
    Rng unused(0);
    Mlp net = init_mlp(spec, unused);
    ParamStore restored;
    for (const auto& [name, value] : net.params) {
        const Tensor& stored = entry(ckpt, prefix + ".param." + name);
        if (stored.shape() != value.shape()) {
            throw ShapeError("checkpoint: '" + name + "' has shape " + to_string(stored.shape()) + ", expected " +
                             to_string(value.shape()));
        }
        restored.add(name, stored);
    }
    net.params = std::move(restored);
    for (auto& [layer, stats] : net.bn) {
        const std::string base = prefix + ".bn." + layer;
        stats.running_mean = entry(ckpt, base + ".running_mean");
        stats.running_var = entry(ckpt, base + ".running_var");
        stats.momentum = entry(ckpt, base + ".momentum").item();
        stats.eps = entry(ckpt, base + ".eps").item();
    }
    return net;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out << kMagic << ' ' << kVersion << '\n';
    for (const auto& [key, value] : ckpt) {
        require(key.find_first_of(" \t\n") == std::string::npos, "checkpoint: keys may not contain whitespace");
        out << key << ' ' << value.rank();
        for (auto d : value.shape()) out << ' ' << d;
        for (double v : value.data()) out << ' ' << hex_double(v);
        out << '\n';
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kMagic || version != kVersion) throw ContractError("checkpoint: unrecognized header");
    Checkpoint ckpt;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string key;
        std::size_t rank = 0;
        fields >> key >> rank;
        Shape shape(rank);
        for (auto& d : shape) fields >> d;
        if (!fields) throw ContractError("checkpoint: malformed entry '" + key + "'");
        std::vector<double> data(element_count(shape));
        for (auto& v : data) {
            std::string token;
            if (!(fields >> token)) throw ContractError("checkpoint: truncated entry '" + key + "'");
            v = parse_double(token);
        }
        if (!ckpt.emplace(key, Tensor(std::move(shape), std::move(data))).second) {
            throw ContractError("checkpoint: duplicate entry '" + key + "'");
        }
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace adrlab::nn
