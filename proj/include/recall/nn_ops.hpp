#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "recall/params.hpp"

// Differentiable building blocks of the parser. Each forward fills a cache
// that its backward consumes; backward functions accumulate (+=) parameter
// gradients and return input gradients.
namespace recall::nn {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// LSTM cell with gates stacked [input; forget; candidate; output] and weights
/// applied to the concatenation [x; h_prev].
struct LstmCache {
  Vec input;  // [x; h_prev]
  Vec i, f, g, o;
  Vec c_prev, tanh_c;
};

void lstm_forward(ConstMatMap w, ConstVecMap b, const Vec& x, const Vec& h_prev, const Vec& c_prev, LstmCache& cache,
                  Vec& h, Vec& c);

/// Given dL/dh and dL/dc of this step, accumulates dW, db and writes the
/// gradients of x, h_prev and c_prev.
void lstm_backward(ConstMatMap w, const LstmCache& cache, const Vec& dh, const Vec& dc, MatMap dw, VecMap db, Vec& dx,
                   Vec& dh_prev, Vec& dc_prev);

/// Dot-product attention of a query over the rows of `memory`.
struct AttentionCache {
  Vec weights;
};

Vec attention_forward(const RowMatrix& memory, const Vec& query, AttentionCache& cache);
/// Accumulates into d_memory and d_query.
void attention_backward(const RowMatrix& memory, const Vec& query, const AttentionCache& cache, const Vec& d_context,
                        RowMatrix& d_memory, Vec& d_query);

/// Gated adapter: phi = tanh(Wphi h), gate = sigmoid(Wg [phi; h]),
/// out = gate * phi + (1 - gate) * h.
struct AdapterCache {
  Vec phi, gate, joint;
};

Vec adapter_forward(ConstMatMap w_phi, ConstMatMap w_gate, const Vec& h, AdapterCache& cache,
                    const double* forced_gate_logit = nullptr);
Vec adapter_backward(ConstMatMap w_phi, ConstMatMap w_gate, const Vec& h, const AdapterCache& cache, const Vec& d_out,
                     MatMap dw_phi, MatMap dw_gate);

/// Softmax restricted to the candidate rows of `embeddings`:
/// p(a) = exp(c_a . s) / sum over candidates.
std::vector<double> subset_softmax(ConstMatMap embeddings, std::span<const int> candidates, const Vec& state);

/// Backward of -log p(candidates[gold]) given the forward probabilities.
/// Accumulates into embedding rows and returns dL/dstate.
Vec subset_nll_backward(ConstMatMap embeddings, std::span<const int> candidates, std::span<const double> probs,
                        std::size_t gold, const Vec& state, MatMap d_embeddings);

}  // namespace recall::nn
