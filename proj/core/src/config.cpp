#include "celladapt/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "celladapt/errors.hpp"
#include "celladapt/rng.hpp"

namespace celladapt {

Config Config::defaults() {
    Config c;
    auto& kv = c.kv_;
    kv["seed"] = "1";
    kv["seed.synth"] = "0"; // 0 = derive from the global seed
    kv["seed.adaptation"] = "0";
    kv["deterministic"] = "true";
    kv["threads"] = "0"; // 0 = hardware default

    kv["th_d"] = "100";
    kv["th_u"] = "10";
    kv["th_u_fraction"] = "0";
    kv["T"] = "10";
    kv["iterations"] = "4";
    kv["sigma"] = "6";
    kv["amplitude"] = "255";
    kv["nms_radius"] = "6";
    kv["d_match"] = "10";
    kv["patch_size"] = "128";
    kv["uncertainty_metric"] = "mean_p1";
    kv["neg_per_pos"] = "1";
    kv["corrupt_pseudo_negatives"] = "true";
    kv["candidate_subset"] = "0";

    kv["detector.width"] = "8";
    kv["detector.epochs"] = "60";
    kv["detector.finetune_epochs"] = "20";
    kv["detector.batch_size"] = "8";
    kv["detector.lr"] = "0.001";
    kv["detector.augment"] = "false";
    kv["detector.from_scratch"] = "false";

    kv["discriminator.width"] = "8";
    kv["discriminator.epochs"] = "40";
    kv["discriminator.finetune_epochs"] = "15";
    kv["discriminator.batch_size"] = "8";
    kv["discriminator.lr"] = "0.001";
    kv["discriminator.dropout"] = "0.2";

    kv["synth.labeled_source"] = "24";
    kv["synth.unlabeled_target"] = "1000";
    kv["synth.test_source"] = "20";
    kv["synth.test_target"] = "20";
    kv["synth.test_image_size"] = "256";

    kv["synth.source.ecc_min"] = "1.0";
    kv["synth.source.ecc_max"] = "1.3";
    kv["synth.source.radius_min"] = "4";
    kv["synth.source.radius_max"] = "7";
    kv["synth.source.density"] = "6";
    kv["synth.source.noise_std"] = "5";
    kv["synth.source.background"] = "120";
    kv["synth.source.texture"] = "false";

    kv["synth.target.ecc_min"] = "2.5";
    kv["synth.target.ecc_max"] = "4.0";
    kv["synth.target.radius_min"] = "4";
    kv["synth.target.radius_max"] = "7";
    kv["synth.target.density"] = "6";
    kv["synth.target.noise_std"] = "5";
    kv["synth.target.background"] = "120";
    kv["synth.target.texture"] = "false";
    return c;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = kv_.find(key);
    if (it == kv_.end())
        throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

Config Config::from_file(const std::string& path) {
    Config c = defaults();
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            if (b == std::string::npos) return std::string{};
            const auto e = s.find_last_not_of(" \t");
            return s.substr(b, e - b + 1);
        };
        const std::string stripped = strip(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        const std::string key = strip(stripped.substr(0, eq));
        const std::string value = strip(stripped.substr(eq + 1));
        try {
            c.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

std::string Config::get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end())
        throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
}

int Config::get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t used = 0;
        const long d = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return static_cast<int>(d);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }
}

bool Config::get_bool(const std::string& key) const {
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::uint64_t Config::get_u64(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t used = 0;
        const unsigned long long d = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
    }
}

std::string Config::echo() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
}

std::string Config::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : kv_) {
        if (k == "threads" || k == "deterministic") continue;
        for (unsigned char c : k) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= '=';
        h *= 0x100000001b3ULL;
        for (unsigned char c : v) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t Config::component_seed(const std::string& name) const {
    const std::string key = "seed." + name;
    if (has(key)) {
        const std::uint64_t explicit_seed = get_u64(key);
        if (explicit_seed != 0) return explicit_seed;
    }
    return sub_seed(get_u64("seed"), name);
}

AdaptationConfig Config::adaptation() const {
    AdaptationConfig a;
    a.th_d = static_cast<float>(get_double("th_d"));
    a.th_u = get_int("th_u");
    a.th_u_fraction = get_double("th_u_fraction");
    a.T = get_int("T");
    a.max_iterations = get_int("iterations");
    a.sigma = static_cast<float>(get_double("sigma"));
    a.amplitude = static_cast<float>(get_double("amplitude"));
    a.nms_radius = get_int("nms_radius");
    a.d_match = static_cast<float>(get_double("d_match"));
    a.patch_size = get_int("patch_size");
    a.detector_arch.width = get_int("detector.width");
    a.discriminator_arch.width = get_int("discriminator.width");
    a.discriminator_arch.dropout = static_cast<float>(get_double("discriminator.dropout"));
    a.detector_train.learning_rate = static_cast<float>(get_double("detector.lr"));
    a.detector_train.epochs = get_int("detector.epochs");
    a.detector_train.batch_size = get_int("detector.batch_size");
    a.detector_train.augment = get_bool("detector.augment");
    a.detector_finetune_epochs = get_int("detector.finetune_epochs");
    a.detector_from_scratch = get_bool("detector.from_scratch");
    a.discriminator_train.learning_rate = static_cast<float>(get_double("discriminator.lr"));
    a.discriminator_train.epochs = get_int("discriminator.epochs");
    a.discriminator_train.batch_size = get_int("discriminator.batch_size");
    a.discriminator_finetune_epochs = get_int("discriminator.finetune_epochs");
    a.neg_per_pos = get_int("neg_per_pos");
    a.corrupt_pseudo_negatives = get_bool("corrupt_pseudo_negatives");
    a.candidate_subset = get_int("candidate_subset");
    a.uncertainty_metric = get_string("uncertainty_metric");
    a.seed = component_seed("adaptation");
    a.config_hash = hash();
    return a;
}

SynthConfig Config::synth() const {
    auto domain = [this](const std::string& prefix) {
        DomainParams p;
        p.ecc_min = static_cast<float>(get_double(prefix + ".ecc_min"));
        p.ecc_max = static_cast<float>(get_double(prefix + ".ecc_max"));
        p.radius_min = static_cast<float>(get_double(prefix + ".radius_min"));
        p.radius_max = static_cast<float>(get_double(prefix + ".radius_max"));
        p.density = static_cast<float>(get_double(prefix + ".density"));
        p.noise_std = static_cast<float>(get_double(prefix + ".noise_std"));
        p.background_level = static_cast<float>(get_double(prefix + ".background"));
        p.texture = get_bool(prefix + ".texture");
        return p;
    };
    SynthConfig s;
    s.source = domain("synth.source");
    s.target = domain("synth.target");
    s.counts.labeled_source = get_int("synth.labeled_source");
    s.counts.unlabeled_target = get_int("synth.unlabeled_target");
    s.counts.test_source = get_int("synth.test_source");
    s.counts.test_target = get_int("synth.test_target");
    s.patch_size = get_int("patch_size");
    s.test_image_size = get_int("synth.test_image_size");
    return s;
}

void Config::validate() const {
    if (threads() < 0)
        throw ConfigError("threads must be >= 0");
    get_bool("deterministic");
    get_u64("seed");

    const AdaptationConfig a = adaptation();
    celladapt::validate(a);

    const SynthConfig s = synth();
    try {
        celladapt::validate(s.source);
        celladapt::validate(s.target);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (s.counts.labeled_source < 0 || s.counts.unlabeled_target < 0 ||
        s.counts.test_source < 0 || s.counts.test_target < 0)
        throw ConfigError("synth counts must be >= 0");
    if (s.test_image_size < s.patch_size)
        throw ConfigError("synth.test_image_size must be >= patch_size");
}

} // namespace celladapt
