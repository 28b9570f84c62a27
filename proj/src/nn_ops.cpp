#include "recall/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace recall::nn {

void lstm_forward(ConstMatMap w, ConstVecMap b, const Vec& x, const Vec& h_prev, const Vec& c_prev, LstmCache& cache,
                  Vec& h, Vec& c) {
  const Eigen::Index n = h_prev.size();
  cache.input.resize(x.size() + n);
  cache.input << x, h_prev;
  const Vec a = w * cache.input + b;
  cache.i = a.segment(0, n).unaryExpr(&sigmoid);
  cache.f = a.segment(n, n).unaryExpr(&sigmoid);
  cache.g = a.segment(2 * n, n).array().tanh();
  cache.o = a.segment(3 * n, n).unaryExpr(&sigmoid);
  cache.c_prev = c_prev;
  c = cache.f.cwiseProduct(c_prev) + cache.i.cwiseProduct(cache.g);
  cache.tanh_c = c.array().tanh();
  h = cache.o.cwiseProduct(cache.tanh_c);
}

void lstm_backward(ConstMatMap w, const LstmCache& cache, const Vec& dh, const Vec& dc, MatMap dw, VecMap db, Vec& dx,
                   Vec& dh_prev, Vec& dc_prev) {
  const Eigen::Index n = dh.size();
  const Vec dc_total = dc + dh.cwiseProduct(cache.o).cwiseProduct((1.0 - cache.tanh_c.array().square()).matrix());
  Vec da(4 * n);
  da.segment(0, n) = dc_total.cwiseProduct(cache.g).cwiseProduct(cache.i.cwiseProduct((1.0 - cache.i.array()).matrix()));
  da.segment(n, n) =
      dc_total.cwiseProduct(cache.c_prev).cwiseProduct(cache.f.cwiseProduct((1.0 - cache.f.array()).matrix()));
  da.segment(2 * n, n) = dc_total.cwiseProduct(cache.i).cwiseProduct((1.0 - cache.g.array().square()).matrix());
  da.segment(3 * n, n) =
      dh.cwiseProduct(cache.tanh_c).cwiseProduct(cache.o.cwiseProduct((1.0 - cache.o.array()).matrix()));
  dw.noalias() += da * cache.input.transpose();
  db += da;
  const Vec d_input = w.transpose() * da;
  const Eigen::Index nx = d_input.size() - n;
  dx = d_input.head(nx);
  dh_prev = d_input.tail(n);
  dc_prev = dc_total.cwiseProduct(cache.f);
}

Vec attention_forward(const RowMatrix& memory, const Vec& query, AttentionCache& cache) {
  const Vec scores = memory * query;
  const double mx = scores.maxCoeff();
  cache.weights = (scores.array() - mx).exp();
  cache.weights /= cache.weights.sum();
  return memory.transpose() * cache.weights;
}

void attention_backward(const RowMatrix& memory, const Vec& query, const AttentionCache& cache, const Vec& d_context,
                        RowMatrix& d_memory, Vec& d_query) {
  const Vec& a = cache.weights;
  // context = memory^T a
  const Vec d_weights = memory * d_context;
  d_memory.noalias() += a * d_context.transpose();
  // softmax Jacobian
  const Vec d_scores = a.cwiseProduct((d_weights.array() - a.dot(d_weights)).matrix());
  // scores = memory * query
  d_query.noalias() += memory.transpose() * d_scores;
  d_memory.noalias() += d_scores * query.transpose();
}

Vec adapter_forward(ConstMatMap w_phi, ConstMatMap w_gate, const Vec& h, AdapterCache& cache,
                    const double* forced_gate_logit) {
  const Eigen::Index n = h.size();
  cache.phi = (w_phi * h).array().tanh();
  cache.joint.resize(2 * n);
  cache.joint << cache.phi, h;
  if (forced_gate_logit) {
    cache.gate = Vec::Constant(n, sigmoid(*forced_gate_logit));
  } else {
    cache.gate = (w_gate * cache.joint).unaryExpr(&sigmoid);
  }
  return cache.gate.cwiseProduct(cache.phi) + (1.0 - cache.gate.array()).matrix().cwiseProduct(h);
}

Vec adapter_backward(ConstMatMap w_phi, ConstMatMap w_gate, const Vec& h, const AdapterCache& cache, const Vec& d_out,
                     MatMap dw_phi, MatMap dw_gate) {
  const Eigen::Index n = h.size();
  const Vec d_gate = d_out.cwiseProduct(cache.phi - h);
  Vec d_phi = d_out.cwiseProduct(cache.gate);
  Vec d_h = d_out.cwiseProduct((1.0 - cache.gate.array()).matrix());
  const Vec d_u = d_gate.cwiseProduct(cache.gate.cwiseProduct((1.0 - cache.gate.array()).matrix()));
  dw_gate.noalias() += d_u * cache.joint.transpose();
  const Vec d_joint = w_gate.transpose() * d_u;
  d_phi += d_joint.head(n);
  d_h += d_joint.tail(n);
  const Vec d_v = d_phi.cwiseProduct((1.0 - cache.phi.array().square()).matrix());
  dw_phi.noalias() += d_v * h.transpose();
  d_h.noalias() += w_phi.transpose() * d_v;
  return d_h;
}

std::vector<double> subset_softmax(ConstMatMap embeddings, std::span<const int> candidates, const Vec& state) {
  std::vector<double> p(candidates.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    p[k] = embeddings.row(candidates[k]).dot(state);
    mx = std::max(mx, p[k]);
  }
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

Vec subset_nll_backward(ConstMatMap embeddings, std::span<const int> candidates, std::span<const double> probs,
                        std::size_t gold, const Vec& state, MatMap d_embeddings) {
  Vec d_state = Vec::Zero(state.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double d_logit = probs[k] - (k == gold ? 1.0 : 0.0);
    d_embeddings.row(candidates[k]) += d_logit * state.transpose();
    d_state += d_logit * embeddings.row(candidates[k]).transpose();
  }
  return d_state;
}

}  // namespace recall::nn
