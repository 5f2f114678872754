#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "celladapt/nn/params.hpp"

namespace celladapt::nn {

/// Versioned model checkpoint: architecture descriptor, weights, optimizer
/// moments, and the hash of the config that produced it. Loading against a
/// different config hash is refused unless forced.
struct Checkpoint {
    std::string kind;                        // "unet" | "resnet-discriminator"
    std::map<std::string, double> arch;      // numeric architecture descriptor
    std::string config_hash;
    std::vector<float> values;
    AdamOpt adam;
    std::map<std::string, double> extra;     // e.g. epochs trained
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws DataError when the stored hash differs and force is false.
void check_config_hash(const Checkpoint& ck, const std::string& expected_hash, bool force);

} // namespace celladapt::nn
