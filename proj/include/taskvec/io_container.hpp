#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "taskvec/tensor.hpp"

namespace taskvec {

// Lower-level entry points used to stow extra provenance fields in the file
// header next to "meta". Task-vector serialization is built on these; plain
// checkpoints go through save_checkpoint/load_checkpoint in io.hpp.
using ProvenanceFields = std::map<std::string, std::string>;

void save_container(const Checkpoint& ckpt, const ProvenanceFields* provenance,
                    const std::filesystem::path& path);

struct LoadedContainer {
    Checkpoint ckpt;
    ProvenanceFields provenance; // empty when the header has none
    bool has_provenance = false;
};

LoadedContainer load_container(const std::filesystem::path& path);

} // namespace taskvec
