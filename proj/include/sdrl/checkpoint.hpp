// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint layout: a text header
//
//   SDRLCKPT 1
//   vocab_size <n>  embed_dim <n>  max_seq_len <n>  block_size <n>  seed <n>  (one per line)
//   tensors <count>
//   end_header
//
// followed, per tensor, by u32 name length, name bytes, u32 rank, u64 dims,
// then little-endian IEEE-754 doubles.

#include <filesystem>

#include "sdrl/denoiser.hpp"

namespace sdrl {

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path);
/// Throws ValidationError on a malformed or mismatched file.
DenoiserParams load_checkpoint(const std::filesystem::path& path);

} // namespace sdrl
