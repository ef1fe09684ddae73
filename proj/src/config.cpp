#include "capsbench/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace capsbench {

namespace {
const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // core
        "model", "dataset", "epochs", "batch_size", "learning_rate", "seed", "output_dir",
        "timing", "patience", "checkpoint",
        // adam
        "adam.beta1", "adam.beta2", "adam.eps",
        // capsnet
        "capsnet.D1", "capsnet.D2", "capsnet.F", "capsnet.stem_maps", "capsnet.stem_kernel",
        "capsnet.primary_kernel", "capsnet.primary_stride", "capsnet.routing_iterations",
        "capsnet.m_plus", "capsnet.m_minus", "capsnet.lambda", "capsnet.recon_weight",
        "capsnet.decoder_h1", "capsnet.decoder_h2", "capsnet.detach_couplings",
        // lenet
        "lenet.kernel", "lenet.channels", "lenet.fc1", "lenet.fc2",
        // fisherfaces
        "fisherfaces.n_components",
        // tiny_resnet
        "resnet.blocks", "resnet.channels", "resnet.kernel",
        // preprocessing policy
        "preprocess.equalize_range_threshold", "preprocess.equalize_entropy_threshold",
        // recorded by checkpoints so eval can rebuild the model
        "input_height", "input_width", "classes",
    };
    return keys;
}

const std::set<std::string>& known_models() {
    static const std::set<std::string> models = {"capsnet", "lenet", "fisherfaces",
                                                 "tiny_resnet"};
    return models;
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config file '" + path + "' not found");
    std::stringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("config: empty key");
    kv_[key] = value;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : kv_)
        if (!known_keys().count(key)) unknown.push_back(key);
    if (!unknown.empty()) {
        std::string msg = "config: unknown keys:";
        for (const std::string& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
    if (!has("model")) throw ConfigError("config: missing required key 'model'");
    if (!known_models().count(get_string("model")))
        throw ConfigError("config: unknown model '" + get_string("model") + "'");
    if (batch_size() < 1) throw ConfigError("config: batch_size must be >= 1");
    if (!(learning_rate() > 0)) throw ConfigError("config: learning_rate must be positive");
    if (epochs() < 1) throw ConfigError("config: epochs must be >= 1");
}

std::string ExperimentConfig::get_string(const std::string& key, const std::string& def) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
}

std::string ExperimentConfig::require_string(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
}

int ExperimentConfig::get_int(const std::string& key, int def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

uint64_t ExperimentConfig::get_u64(const std::string& key, uint64_t def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

real ExperimentConfig::get_real(const std::string& key, real def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
        return static_cast<real>(std::stod(it->second));
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: '" + it->second + "'");
    }
}

bool ExperimentConfig::get_bool(const std::string& key, bool def) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: '" + v + "'");
}

int ExperimentConfig::batch_size() const {
    if (has("batch_size")) return get_int("batch_size", 0);
    const std::string m = get_string("model");
    if (m == "capsnet") return 16;
    if (m == "lenet") return 128;
    if (m == "tiny_resnet") return 64;
    return 1;
}

real ExperimentConfig::learning_rate() const {
    if (has("learning_rate")) return get_real("learning_rate", 0);
    const std::string m = get_string("model");
    if (m == "lenet") return 0.0001;
    return 0.001;
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& [key, value] : kv_) out += key + "=" + value + "\n";
    return out;
}

}  // namespace capsbench
