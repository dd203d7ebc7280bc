#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rode/matrix.hpp"
#include "rode/transformer.hpp"

namespace rode {

// Versioned binary container: magic, version, config JSON echo, then named
// f64 tensors. Round-trips are bit exact.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<NamedParam>& params);

struct Checkpoint {
    std::string config_json;
    std::vector<std::pair<std::string, Matrix>> tensors;
};

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the model's parameters by name; every model
// parameter must be present with a matching shape.
void restore_parameters(ToyTransformer& model, const Checkpoint& ckpt);

} // namespace rode
