// SPDX-License-Identifier: Apache-2.0
// Small instances of each model family (well under 1k parameters) for
// finite-difference checks.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nli/models.hpp"
#include "nli/nn/layers.hpp"

namespace nli::testing {

inline models::ModelSpec toy_spec(models::ModelKind kind)
{
    models::ModelSpec s;
    s.kind = kind;
    s.frames = 6;
    s.n_mfcc = 4;
    s.ann_hidden = {8, 5};
    s.dropout = 0.25;
    s.cnn_filters = 2;
    s.cnn_blocks = 1;
    s.cnn_dense = 5;
    s.lstm_units = {4, 3};
    s.rnn_dense = 4;
    return s;
}

/// Returns a hook that reseeds every dropout layer so repeated training-mode
/// forwards draw identical masks.
inline std::function<void()> dropout_reseeder(nn::Sequential& net, std::uint64_t seed)
{
    std::vector<nn::Dropout*> drops;
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
        if (auto* d = dynamic_cast<nn::Dropout*>(&net.layer(i))) {
            drops.push_back(d);
        }
    }
    return [drops, seed] {
        for (std::size_t i = 0; i < drops.size(); ++i) {
            drops[i]->reseed(seed + i);
        }
    };
}

} // namespace nli::testing
