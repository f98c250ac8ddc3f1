#include "lslp/encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "lslp/error.hpp"
#include "lslp/kernels.hpp"

namespace lslp {

std::size_t EncoderArch::depth() const { return layers.empty() ? input_channels : layers.back().channels; }

std::size_t EncoderArch::downsample() const {
    std::size_t f = 1;
    for (const auto& l : layers)
        if (l.pool) f *= 2;
    return f;
}

nlohmann::json to_json(const EncoderArch& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : arch.layers) layers.push_back({{"channels", l.channels}, {"pool", l.pool}});
    return {{"input_channels", arch.input_channels}, {"layers", layers}};
}

EncoderArch arch_from_json(const nlohmann::json& j) {
    EncoderArch arch;
    arch.input_channels = j.at("input_channels").get<std::size_t>();
    arch.layers.clear();
    for (const auto& l : j.at("layers")) arch.layers.push_back({l.at("channels").get<std::size_t>(), l.at("pool").get<bool>()});
    if (arch.input_channels == 0 || arch.layers.empty()) throw ConfigError("encoder needs input channels and at least one layer");
    for (const auto& l : arch.layers)
        if (l.channels == 0) throw ConfigError("encoder layer channels must be positive");
    return arch;
}

EncoderParams init_params(const EncoderArch& arch, std::uint64_t seed) {
    EncoderParams p{arch, {}, {}};
    std::mt19937_64 rng(seed);
    std::size_t in = arch.input_channels;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const std::size_t out = arch.layers[i].channels;
        const double bound = std::sqrt(6.0 / static_cast<double>(in * 9 + out * 9));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor w(Shape{out, in, 3, 3});
        for (auto& v : w.data()) v = static_cast<float>(u(rng));
        p.tensors.push_back(std::move(w));
        p.tensors.emplace_back(Shape{out});
        p.names.push_back("conv" + std::to_string(i + 1) + ".weight");
        p.names.push_back("conv" + std::to_string(i + 1) + ".bias");
        in = out;
    }
    return p;
}

namespace {

void check_image(const Tensor& image, const EncoderArch& arch) {
    const std::size_t f = arch.downsample();
    if (image.rank() != 3 || image.dim(0) != arch.input_channels || image.dim(1) % f != 0 || image.dim(2) % f != 0)
        throw ShapeError("encoder input " + shape_string(image.shape()) + " must be (" +
                         std::to_string(arch.input_channels) + ", H, W) with H and W divisible by " +
                         std::to_string(f));
}

}  // namespace

Tensor encode(const Tensor& image, const EncoderParams& params) {
    check_image(image, params.arch);
    Tensor x = image;
    for (std::size_t i = 0; i < params.arch.layers.size(); ++i) {
        x = kernels::bias_add_forward(kernels::conv2d_forward(x, params.tensors[2 * i], 1), params.tensors[2 * i + 1]);
        for (auto& v : x.data()) v = v < 0.0f ? 0.0f : v;  // NaN passes through
        if (params.arch.layers[i].pool) x = kernels::max_pool2_forward(x).output;
    }
    return x;
}

std::vector<NodeId> add_parameters(Graph& graph, const EncoderParams& params) {
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < params.tensors.size(); ++i) ids.push_back(graph.parameter(params.tensors[i], params.names[i]));
    return ids;
}

NodeId encode(Graph& graph, NodeId image, const EncoderParams& params, std::span<const NodeId> param_nodes) {
    check_image(graph.value(image), params.arch);
    if (param_nodes.size() != params.tensors.size()) throw ShapeError("encoder parameter node count mismatch");
    NodeId x = image;
    for (std::size_t i = 0; i < params.arch.layers.size(); ++i) {
        const std::string tag = "conv" + std::to_string(i + 1);
        x = graph.conv2d(x, param_nodes[2 * i], 1, tag);
        x = graph.bias_add(x, param_nodes[2 * i + 1], tag + ".bias");
        x = graph.relu(x, tag + ".relu");
        if (params.arch.layers[i].pool) x = graph.max_pool2(x, tag + ".pool");
    }
    return x;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::filesystem::create_directories(dir / "params");
    nlohmann::json j;
    j["format"] = "lslp-checkpoint";
    j["version"] = 1;
    j["arch"] = to_json(ckpt.params.arch);
    j["fingerprint"] = ckpt.fingerprint;
    j["iteration"] = ckpt.optimizer.iteration;
    j["optimizer"] = {{"base_lr", ckpt.optimizer.base_lr},
                      {"decay_factor", ckpt.optimizer.decay_factor},
                      {"decay_every", ckpt.optimizer.decay_every}};
    // Episode streams are counter-based on (seed, iteration), so this is the full RNG state.
    j["rng"] = {{"seed", ckpt.seed}, {"counter", ckpt.optimizer.iteration}};
    j["config"] = ckpt.config;
    auto& params = j["params"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
        const std::string file = "params/" + ckpt.params.names[i] + ".lslp";
        save_tensor(dir / file, ckpt.params.tensors[i]);
        params.push_back({{"name", ckpt.params.names[i]}, {"file", file}});
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
    out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("no checkpoint manifest in " + dir.string());
    Checkpoint ckpt;
    try {
        nlohmann::json j;
        in >> j;
        if (j.at("format") != "lslp-checkpoint" || j.at("version") != 1)
            throw DataError("unsupported checkpoint format in " + dir.string());
        ckpt.params.arch = arch_from_json(j.at("arch"));
        ckpt.fingerprint = j.at("fingerprint").get<std::string>();
        ckpt.optimizer.iteration = j.at("iteration").get<std::uint64_t>();
        ckpt.optimizer.base_lr = j.at("optimizer").at("base_lr").get<double>();
        ckpt.optimizer.decay_factor = j.at("optimizer").at("decay_factor").get<double>();
        ckpt.optimizer.decay_every = j.at("optimizer").at("decay_every").get<std::uint64_t>();
        ckpt.seed = j.at("rng").at("seed").get<std::uint64_t>();
        ckpt.config = j.at("config");
        for (const auto& p : j.at("params")) {
            ckpt.params.names.push_back(p.at("name").get<std::string>());
            ckpt.params.tensors.push_back(load_tensor(dir / p.at("file").get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    const EncoderParams expected = init_params(ckpt.params.arch, 0);
    if (expected.tensors.size() != ckpt.params.tensors.size())
        throw DataError("checkpoint parameter count does not match its architecture");
    for (std::size_t i = 0; i < expected.tensors.size(); ++i)
        if (expected.tensors[i].shape() != ckpt.params.tensors[i].shape())
            throw DataError("checkpoint tensor " + ckpt.params.names[i] + " has shape " +
                            shape_string(ckpt.params.tensors[i].shape()));
    return ckpt;
}

}  // namespace lslp
