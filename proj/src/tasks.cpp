// SPDX-License-Identifier: Apache-2.0
#include "sdrl/tasks.hpp"

#include <algorithm>

namespace sdrl {

double copy_reward(const TokenSequence& x, std::size_t k) {
    const std::size_t p = x.prompt_len, r = x.response_len();
    if (k == 0 || k > r || k > p) return 0.0;
    const auto* t = x.tokens.data();
    for (std::size_t a = p; a + k <= p + r; ++a)
        for (std::size_t b = 0; b + k <= p; ++b)
            if (std::equal(t + a, t + a + k, t + b)) return 1.0;
    return 0.0;
}

double parity_reward(const TokenSequence& x) {
    if (x.response_len() == 0) return 0.0;
    int parity = 0;
    for (std::size_t i = 0; i < x.prompt_len; ++i) parity ^= (x.tokens[i] & 1);
    return x.tokens[x.prompt_len] == parity ? 1.0 : 0.0;
}

double sorted_reward(const TokenSequence& x) {
    const std::size_t r = x.response_len();
    if (r < 2) return 1.0;
    std::size_t ok = 0;
    for (std::size_t i = x.prompt_len; i + 1 < x.size(); ++i)
        if (x.tokens[i] <= x.tokens[i + 1]) ++ok;
    return static_cast<double>(ok) / static_cast<double>(r - 1);
}

ToyTask make_task(const std::string& name, const TaskParams& tp) {
    if (tp.alphabet < 2) throw ConfigError("task: alphabet must have at least two symbols");
    ToyTask t;
    t.name = name;
    t.params = tp;
    auto symbols = [tp](std::size_t alphabet) {
        return [tp, alphabet](Rng& rng) {
            TokenSequence s;
            s.prompt_len = tp.prompt_len;
            s.tokens.resize(tp.prompt_len);
            for (int& v : s.tokens) v = static_cast<int>(uniform01(rng) * static_cast<double>(alphabet));
            return s;
        };
    };
    if (name == "copy") {
        if (tp.match_len == 0 || tp.match_len > tp.response_len || tp.match_len > tp.prompt_len)
            throw ConfigError("copy task: match_len must lie in [1, min(prompt_len, response_len)]");
        t.make_prompt = symbols(tp.alphabet);
        t.reward = [k = tp.match_len](const TokenSequence& x) { return copy_reward(x, k); };
    } else if (name == "parity") {
        t.make_prompt = symbols(2);
        t.reward = parity_reward;
    } else if (name == "sorted") {
        t.make_prompt = symbols(tp.alphabet);
        t.reward = sorted_reward;
    } else {
        throw ConfigError("unknown task '" + name + "'");
    }
    return t;
}

std::vector<ToyTask> builtin_tasks(const TaskParams& params) {
    return {make_task("copy", params), make_task("parity", params), make_task("sorted", params)};
}

} // namespace sdrl
