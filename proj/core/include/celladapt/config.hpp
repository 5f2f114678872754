#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "celladapt/selftrain.hpp"
#include "celladapt/synth.hpp"

namespace celladapt {

/// Flat typed key-value configuration. The defaults profile embeds the
/// published hyperparameters (th_d=100, th_u=10, T=10, 4 iterations,
/// learning rate 1e-3); a config file overrides defaults and CLI flags
/// override the file. Unknown keys are rejected.
class Config {
public:
    static Config defaults();
    /// defaults + `key = value` lines ('#' comments allowed).
    static Config from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;

    /// Canonical sorted `key = value` listing; echoed into run directories.
    std::string echo() const;
    /// FNV-1a hash (hex) of the result-relevant config; stamped into
    /// checkpoints. Excludes keys that cannot change results (threads,
    /// deterministic).
    std::string hash() const;

    /// Named per-component seed: an explicit seed.<name> key wins, otherwise
    /// the stream is derived from the global seed. Changing one component's
    /// seed never perturbs another's stream.
    std::uint64_t component_seed(const std::string& name) const;

    /// Parses every key once and cross-checks ranges. Throws ConfigError.
    void validate() const;

    AdaptationConfig adaptation() const;
    SynthConfig synth() const;
    float d_match() const { return static_cast<float>(get_double("d_match")); }
    int threads() const { return get_int("threads"); }

private:
    std::map<std::string, std::string> kv_;
};

} // namespace celladapt
