#pragma once

#include <optional>
#include <string>
#include <vector>

#include "splitprune/model.hpp"
#include "splitprune/pruner.hpp"

namespace splitprune {

// Binary container holding a model, optionally the pruner state and the
// config text of the run that produced it. Layout: docs/FORMATS.md.
struct Checkpoint {
    Model model;
    std::optional<PrunerState> pruner;
    std::string config_text;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace splitprune
