#pragma once

#include <cstdint>
#include <string>

#include "hdlab/nets.hpp"

namespace hdlab {

// Single-document JSON checkpoint: {"config": {...}, "seed": n,
// "params": {name: [floats]}}. Floats keep full round-trip precision.
std::string net_to_json(const VelocityNet& net);
VelocityNet net_from_json(const std::string& json_text);
void save_net(const VelocityNet& net, const std::string& path);
VelocityNet load_net(const std::string& path);

// Stage-2 checkpoints carry the generator and fake branch together; the real
// branch is referenced by path and parameter checksum.
struct Stage2Checkpoint {
    VelocityNet generator;
    VelocityNet fake_branch;
    std::string real_branch_path;
    std::uint64_t real_branch_checksum = 0;
};

void save_stage2(const Stage2Checkpoint& ckpt, const std::string& path);
Stage2Checkpoint load_stage2(const std::string& path);

}  // namespace hdlab
