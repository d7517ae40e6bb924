#include "hdlab/checkpoint.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hdlab/io.hpp"

namespace hdlab {

namespace {

nlohmann::ordered_json net_doc(const VelocityNet& net) {
    nlohmann::ordered_json j;
    j["config"] = {
        {"label", net.size().label},
        {"hidden_dim", net.size().hidden_dim},
        {"layers", net.size().layers},
        {"learning_rate", net.size().learning_rate},
        {"cond", {{"t", net.cond().t}, {"r", net.cond().r}, {"c", net.cond().c}}},
        {"data_dim", net.data_dim()},
        {"num_classes", net.num_classes()},
    };
    j["seed"] = net.build_seed();
    nlohmann::ordered_json params;
    for (const auto& np : net.params()) {
        params[np.name] = std::vector<double>(np.value.data().begin(), np.value.data().end());
    }
    j["params"] = std::move(params);
    return j;
}

VelocityNet net_from_doc(const nlohmann::json& j) {
    const auto& c = j.at("config");
    SizeConfig size;
    size.label = c.at("label").get<std::string>();
    size.hidden_dim = c.at("hidden_dim").get<int>();
    size.layers = c.at("layers").get<int>();
    size.learning_rate = c.at("learning_rate").get<double>();
    CondSet cond;
    cond.t = c.at("cond").at("t").get<bool>();
    cond.r = c.at("cond").at("r").get<bool>();
    cond.c = c.at("cond").at("c").get<bool>();
    VelocityNet net = VelocityNet::build(size, cond, j.at("seed").get<std::uint64_t>(),
                                         c.at("data_dim").get<int>(),
                                         c.at("num_classes").get<int>());
    const auto& params = j.at("params");
    for (auto& np : net.params()) {
        if (!params.contains(np.name)) {
            throw std::runtime_error("checkpoint missing parameter '" + np.name + "'");
        }
        const auto vals = params.at(np.name).get<std::vector<double>>();
        if (vals.size() != np.value.numel()) {
            throw std::runtime_error("checkpoint parameter '" + np.name + "' has wrong size");
        }
        for (std::size_t i = 0; i < vals.size(); ++i) np.value[i] = vals[i];
        np.value.require_finite(np.name.c_str());
    }
    return net;
}

nlohmann::json parse(const std::string& text, const std::string& what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("cannot parse " + what + ": " + e.what());
    }
}

}  // namespace

std::string net_to_json(const VelocityNet& net) { return net_doc(net).dump() + "\n"; }

VelocityNet net_from_json(const std::string& json_text) {
    return net_from_doc(parse(json_text, "net checkpoint"));
}

void save_net(const VelocityNet& net, const std::string& path) {
    write_text_file(path, net_to_json(net));
}

VelocityNet load_net(const std::string& path) {
    return net_from_doc(parse(read_text_file(path), "net checkpoint '" + path + "'"));
}

void save_stage2(const Stage2Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json j;
    j["generator"] = net_doc(ckpt.generator);
    j["fake_branch"] = net_doc(ckpt.fake_branch);
    char hex[19];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(ckpt.real_branch_checksum));
    j["real_branch"] = {{"path", ckpt.real_branch_path}, {"checksum", hex}};
    write_text_file(path, j.dump() + "\n");
}

Stage2Checkpoint load_stage2(const std::string& path) {
    nlohmann::json j = parse(read_text_file(path), "stage2 checkpoint '" + path + "'");
    Stage2Checkpoint ckpt{net_from_doc(j.at("generator")), net_from_doc(j.at("fake_branch")),
                          j.at("real_branch").at("path").get<std::string>(), 0};
    ckpt.real_branch_checksum = std::stoull(
        j.at("real_branch").at("checksum").get<std::string>(), nullptr, 16);
    return ckpt;
}

}  // namespace hdlab
