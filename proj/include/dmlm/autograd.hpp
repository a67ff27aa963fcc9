#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

namespace dmlm::ag {

using Mat = Eigen::MatrixXd;

/// One value in a reverse-mode tape. Values are computed eagerly at
/// construction; backward closures run in reverse insertion order, which
/// is a valid topological order by construction.
struct Node {
    Mat val;
    Mat grad;  // empty until touched by backprop
    bool requires_grad = false;
    std::function<void()> backward;

    void accumulate(const Mat& g) {
        if (grad.size() == 0) grad = Mat::Zero(val.rows(), val.cols());
        grad += g;
    }
    bool has_grad() const { return grad.size() != 0; }
};

/// Eager computation graph for one training example. Parameters are
/// attached as leaves referencing external value/grad buffers; teacher
/// targets and conditioning vectors enter as constants, which is what
/// makes the stop-gradient guarantee structural rather than numerical.
class Graph {
  public:
    Node* constant(Mat v);

    /// Leaf over an external parameter. grad_sink == nullptr detaches the
    /// parameter (inference mode); otherwise backward() adds into it.
    Node* param(const Mat& value, Mat* grad_sink);

    Node* matmul(Node* a, Node* b);
    Node* transpose(Node* a);
    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* cmul(Node* a, Node* b);
    Node* scale(Node* a, double c);
    /// Adds a 1 x n row vector to every row of a.
    Node* add_rowvec(Node* a, Node* r);
    Node* gelu(Node* a);
    Node* softmax_rows(Node* a);
    /// Pre-norm transform: per-row standardize, then scale/shift by the
    /// 1 x n gain and bias parameters.
    Node* layer_norm(Node* a, Node* gain, Node* bias);
    Node* slice_cols(Node* a, std::size_t c0, std::size_t n);
    Node* concat_cols(Node* a, Node* b);
    /// Embedding lookup: rows of table selected by ids.
    Node* gather_rows(Node* table, const std::vector<int>& ids);
    /// Copy of x with the given rows replaced by the 1 x d row m. Grad
    /// flows to x at untouched rows and to m summed over replaced rows;
    /// the original content of replaced rows is unreachable, which is the
    /// masking information-hiding property.
    Node* row_replace(Node* x, const std::vector<std::size_t>& rows, Node* m);
    Node* clamp(Node* a, double lo, double hi);

    /// Mean over `rows` of KL(N(mu_s, e^lv_s) || N(tgt_mu, e^tgt_lv)),
    /// summed across dimensions; 1 x 1 result. Targets are constants.
    /// Empty rows -> value 0 with no gradient.
    Node* kl_masked_mean(Node* mu_s, Node* lv_s, const Mat& tgt_mu, const Mat& tgt_lv,
                         const std::vector<std::size_t>& rows);

    /// Column means of mu: the pooled mean, 1 x d.
    Node* pool_mu(Node* mu);
    /// Pooled log-variance of the moment-matched mixture, 1 x d. Clamped
    /// to [kLogVarMin, kLogVarMax]; gradient is zero where the clamp is
    /// active.
    Node* pool_log_var(Node* mu, Node* lv);

    /// 2-Wasserstein distance between two pooled diagonal Gaussians given
    /// as 1 x d rows; 1 x 1 result.
    Node* w2_pair(Node* mu_p, Node* lv_p, Node* mu_q, Node* lv_q);

    /// Backpropagate from a 1 x 1 root with the given seed gradient, then
    /// flush parameter gradients into their sinks.
    void backward(Node* root, double seed = 1.0);

    std::size_t size() const { return nodes_.size(); }

  private:
    Node* make(Mat v, bool needs_grad);

    std::deque<std::unique_ptr<Node>> nodes_;
    std::vector<std::pair<Node*, Mat*>> param_sinks_;
};

}  // namespace dmlm::ag
