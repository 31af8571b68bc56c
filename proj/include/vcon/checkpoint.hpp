#pragma once

// Binary network/checkpoint file. Little-endian throughout.
//
//   "VCONCKPT"  u32 version(=1)  u32 name_len  name bytes
//   u32 block_count  u8 has_scheduler  [u64 Q  u64 t]
//   block_count x { u8 kind  payload }
//   "VCONEND\0"
//
// kind 0 dense:       dense payload
// kind 1 compressed:  compressed payload
// kind 2 vcon:        dense payload (original), compressed payload (branch)
//
// dense payload:      u8 activation  u32 n_out  u32 n_in
//                     f64 weight[n_out*n_in] (row-major)  f64 bias[n_out]
// compressed payload: u8 activation  u32 n_out  u32 n_in
//                     u8 variant  f64 sparsity  u32 keep  u32 group  u32 rank
//                     u8 freeze_mask
//                     low-rank: f64 A[n_out*rank]  f64 B[rank*n_in]
//                     otherwise: f64 weight[n_out*n_in]
//                     f64 bias[n_out]
//                     pruning: mask bit-rows, ceil(n_in/8) bytes per row,
//                              column j in bit (j % 8) of byte j / 8
//                     binary:  f64 alpha
//
// variant: 0 prune_layer, 1 prune_global, 2 prune_nm, 3 prune_structured,
//          4 binary, 5 low_rank. activation: 0 none, 1 relu, 2 gelu_approx.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vcon/model.hpp"

namespace vcon {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_network(const Network& net);
Network deserialize_network(std::span<const std::uint8_t> bytes);

void save_network(const Network& net, const std::filesystem::path& path);
/// Throws ParseError naming the byte offset of the first inconsistency.
Network load_network(const std::filesystem::path& path);

/// Human-readable per-block report: compression variant, achieved sparsity,
/// rank or alpha, parameter counts and scheduler state.
std::string inspect_network(const Network& net);

}  // namespace vcon
