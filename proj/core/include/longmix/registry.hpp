#pragma once

#include <string>
#include <vector>

#include "longmix/design.hpp"

namespace longmix {

// The built-in model suite: ridership models on the 50-pair monthly panel.
struct RegistryEntry {
    std::string id;
    std::string description;
    ModelSpec spec;
};

// All built-in models, in canonical (report) order.
const std::vector<RegistryEntry>& model_registry();

// Look up one entry by id; throws UnknownModel with the list of valid ids.
const RegistryEntry& find_model(const std::string& id);

std::vector<std::string> model_ids();

}  // namespace longmix
