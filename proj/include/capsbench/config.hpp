#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "capsbench/tensor.hpp"

namespace capsbench {

// Line-oriented key=value experiment configuration with '#' comments.
// Model-specific keys use dotted names (capsnet.D1=8). Unknown keys are
// rejected with a list of offenders; CLI flags override file values.
class ExperimentConfig {
  public:
    ExperimentConfig() = default;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_text(const std::string& text);

    void set(const std::string& key, const std::string& value);
    // Checks key names and the core invariants (model present, batch_size,
    // learning_rate, epochs).
    void validate() const;

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& def = "") const;
    std::string require_string(const std::string& key) const;
    int get_int(const std::string& key, int def) const;
    uint64_t get_u64(const std::string& key, uint64_t def) const;
    real get_real(const std::string& key, real def) const;
    bool get_bool(const std::string& key, bool def) const;

    std::string model() const { return require_string("model"); }
    std::string dataset() const { return require_string("dataset"); }
    uint64_t seed() const { return get_u64("seed", 1); }
    int epochs() const { return get_int("epochs", 10); }
    int batch_size() const;      // per-model default when unset
    real learning_rate() const;  // per-model default when unset
    std::string output_dir() const { return get_string("output_dir", "."); }
    bool record_wall_time() const { return get_bool("timing", true); }

    // Canonical, sorted key=value dump (used as the checkpoint config record).
    std::string to_text() const;

  private:
    std::map<std::string, std::string> kv_;
};

}  // namespace capsbench
