// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy tasks with exactly computable rewards.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sdrl/denoiser.hpp"
#include "sdrl/rng.hpp"

namespace sdrl {

struct TaskParams {
    std::size_t prompt_len = 8;
    std::size_t response_len = 8;
    std::size_t alphabet = 8;  // symbols 0..alphabet-1 used in prompts
    std::size_t match_len = 2; // copy: length of the window that has to be reproduced
};

struct ToyTask {
    std::string name;
    TaskParams params;
    std::function<TokenSequence(Rng&)> make_prompt;
    /// Reward of a completed sequence (prompt + response).
    std::function<double(const TokenSequence&)> reward;
};

/// copy: 1 iff some match_len window of the response equals a window of the prompt.
double copy_reward(const TokenSequence& x, std::size_t match_len);
/// parity: 1 iff the first response token equals the parity (0 / 1) of the prompt bits.
double parity_reward(const TokenSequence& x);
/// sorted: fraction of adjacent response pairs in nondecreasing order (1 for a single token).
double sorted_reward(const TokenSequence& x);

ToyTask make_task(const std::string& name, const TaskParams& params);
std::vector<ToyTask> builtin_tasks(const TaskParams& params = {});

} // namespace sdrl
