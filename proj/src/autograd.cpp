#include "dmlm/autograd.hpp"

#include <cmath>

#include "dmlm/errors.hpp"
#include "dmlm/gaussian.hpp"

namespace dmlm::ag {

Node* Graph::make(Mat v, bool needs_grad) {
    auto n = std::make_unique<Node>();
    n->val = std::move(v);
    n->requires_grad = needs_grad;
    Node* raw = n.get();
    nodes_.push_back(std::move(n));
    return raw;
}

Node* Graph::constant(Mat v) { return make(std::move(v), false); }

Node* Graph::param(const Mat& value, Mat* grad_sink) {
    Node* n = make(value, grad_sink != nullptr);
    if (grad_sink) param_sinks_.emplace_back(n, grad_sink);
    return n;
}

Node* Graph::matmul(Node* a, Node* b) {
    if (a->val.cols() != b->val.rows()) throw contract_error("matmul: shape mismatch");
    Node* out = make(a->val * b->val, a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            if (a->requires_grad) a->accumulate(out->grad * b->val.transpose());
            if (b->requires_grad) b->accumulate(a->val.transpose() * out->grad);
        };
    }
    return out;
}

Node* Graph::transpose(Node* a) {
    Node* out = make(a->val.transpose(), a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, out]() { a->accumulate(out->grad.transpose()); };
    }
    return out;
}

Node* Graph::add(Node* a, Node* b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols()) {
        throw contract_error("add: shape mismatch");
    }
    Node* out = make(a->val + b->val, a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            if (a->requires_grad) a->accumulate(out->grad);
            if (b->requires_grad) b->accumulate(out->grad);
        };
    }
    return out;
}

Node* Graph::sub(Node* a, Node* b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols()) {
        throw contract_error("sub: shape mismatch");
    }
    Node* out = make(a->val - b->val, a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            if (a->requires_grad) a->accumulate(out->grad);
            if (b->requires_grad) b->accumulate(-out->grad);
        };
    }
    return out;
}

Node* Graph::cmul(Node* a, Node* b) {
    if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols()) {
        throw contract_error("cmul: shape mismatch");
    }
    Node* out = make(a->val.cwiseProduct(b->val), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            if (a->requires_grad) a->accumulate(out->grad.cwiseProduct(b->val));
            if (b->requires_grad) b->accumulate(out->grad.cwiseProduct(a->val));
        };
    }
    return out;
}

Node* Graph::scale(Node* a, double c) {
    Node* out = make(c * a->val, a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, c, out]() { a->accumulate(c * out->grad); };
    }
    return out;
}

Node* Graph::add_rowvec(Node* a, Node* r) {
    if (r->val.rows() != 1 || r->val.cols() != a->val.cols()) {
        throw contract_error("add_rowvec: r must be 1 x cols(a)");
    }
    Mat v = a->val;
    v.rowwise() += r->val.row(0);
    Node* out = make(std::move(v), a->requires_grad || r->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, r, out]() {
            if (a->requires_grad) a->accumulate(out->grad);
            if (r->requires_grad) r->accumulate(out->grad.colwise().sum());
        };
    }
    return out;
}

Node* Graph::gelu(Node* a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c3 = 0.044715;
    Mat v = a->val;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = v(i);
        v(i) = 0.5 * x * (1.0 + std::tanh(k * (x + c3 * x * x * x)));
    }
    Node* out = make(std::move(v), a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, out]() {
            Mat g = out->grad;
            for (Eigen::Index i = 0; i < g.size(); ++i) {
                const double x = a->val(i);
                const double t = std::tanh(k * (x + c3 * x * x * x));
                const double d =
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c3 * x * x);
                g(i) *= d;
            }
            a->accumulate(g);
        };
    }
    return out;
}

Node* Graph::softmax_rows(Node* a) {
    Mat v = a->val;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double mx = v.row(i).maxCoeff();
        v.row(i) = (v.row(i).array() - mx).exp();
        v.row(i) /= v.row(i).sum();
    }
    Node* out = make(std::move(v), a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, out]() {
            Mat g(out->grad.rows(), out->grad.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const double dot = out->grad.row(i).dot(out->val.row(i));
                g.row(i) = out->val.row(i).cwiseProduct(
                    (out->grad.row(i).array() - dot).matrix());
            }
            a->accumulate(g);
        };
    }
    return out;
}

Node* Graph::layer_norm(Node* a, Node* gain, Node* bias) {
    constexpr double eps = 1e-5;
    const Eigen::Index rows = a->val.rows(), cols = a->val.cols();
    if (gain->val.rows() != 1 || gain->val.cols() != cols || bias->val.rows() != 1 ||
        bias->val.cols() != cols) {
        throw contract_error("layer_norm: gain/bias must be 1 x cols");
    }
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double m = a->val.row(i).mean();
        const double var = (a->val.row(i).array() - m).square().mean();
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (a->val.row(i).array() - m) * inv_std[i];
    }
    Mat v = xhat;
    for (Eigen::Index i = 0; i < rows; ++i) {
        v.row(i) = v.row(i).cwiseProduct(gain->val.row(0)) + bias->val.row(0);
    }
    Node* out = make(std::move(v), a->requires_grad || gain->requires_grad || bias->requires_grad);
    if (out->requires_grad) {
        // xhat and inv_std captured by value for the backward pass.
        out->backward = [a, gain, bias, out, xhat, inv_std]() {
            if (bias->requires_grad) bias->accumulate(out->grad.colwise().sum());
            if (gain->requires_grad) gain->accumulate(out->grad.cwiseProduct(xhat).colwise().sum());
            if (a->requires_grad) {
                Mat dx(out->grad.rows(), out->grad.cols());
                for (Eigen::Index i = 0; i < dx.rows(); ++i) {
                    Eigen::RowVectorXd dxhat = out->grad.row(i).cwiseProduct(gain->val.row(0));
                    const double m1 = dxhat.mean();
                    const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                    dx.row(i) =
                        inv_std[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
                }
                a->accumulate(dx);
            }
        };
    }
    return out;
}

Node* Graph::slice_cols(Node* a, std::size_t c0, std::size_t n) {
    if (c0 + n > static_cast<std::size_t>(a->val.cols())) {
        throw contract_error("slice_cols: range out of bounds");
    }
    Node* out = make(a->val.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(n)),
                     a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, out, c0, n]() {
            Mat g = Mat::Zero(a->val.rows(), a->val.cols());
            g.middleCols(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(n)) = out->grad;
            a->accumulate(g);
        };
    }
    return out;
}

Node* Graph::concat_cols(Node* a, Node* b) {
    if (a->val.rows() != b->val.rows()) throw contract_error("concat_cols: row mismatch");
    Mat v(a->val.rows(), a->val.cols() + b->val.cols());
    v << a->val, b->val;
    Node* out = make(std::move(v), a->requires_grad || b->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, b, out]() {
            if (a->requires_grad) a->accumulate(out->grad.leftCols(a->val.cols()));
            if (b->requires_grad) b->accumulate(out->grad.rightCols(b->val.cols()));
        };
    }
    return out;
}

Node* Graph::gather_rows(Node* table, const std::vector<int>& ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table->val.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->val.rows()) {
            throw contract_error("gather_rows: id out of range");
        }
        v.row(static_cast<Eigen::Index>(i)) = table->val.row(ids[i]);
    }
    Node* out = make(std::move(v), table->requires_grad);
    if (out->requires_grad) {
        out->backward = [table, out, ids]() {
            Mat g = Mat::Zero(table->val.rows(), table->val.cols());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                g.row(ids[i]) += out->grad.row(static_cast<Eigen::Index>(i));
            }
            table->accumulate(g);
        };
    }
    return out;
}

Node* Graph::row_replace(Node* x, const std::vector<std::size_t>& rows, Node* m) {
    if (m->val.rows() != 1 || m->val.cols() != x->val.cols()) {
        throw contract_error("row_replace: m must be 1 x cols(x)");
    }
    Mat v = x->val;
    for (std::size_t r : rows) {
        if (r >= static_cast<std::size_t>(v.rows())) {
            throw contract_error("row_replace: row index out of range");
        }
        v.row(static_cast<Eigen::Index>(r)) = m->val.row(0);
    }
    Node* out = make(std::move(v), x->requires_grad || m->requires_grad);
    if (out->requires_grad) {
        out->backward = [x, m, out, rows]() {
            if (x->requires_grad) {
                Mat g = out->grad;
                for (std::size_t r : rows) g.row(static_cast<Eigen::Index>(r)).setZero();
                x->accumulate(g);
            }
            if (m->requires_grad) {
                Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(m->val.cols());
                for (std::size_t r : rows) g += out->grad.row(static_cast<Eigen::Index>(r));
                m->accumulate(g);
            }
        };
    }
    return out;
}

Node* Graph::clamp(Node* a, double lo, double hi) {
    Node* out = make(a->val.array().max(lo).min(hi).matrix(), a->requires_grad);
    if (out->requires_grad) {
        out->backward = [a, out, lo, hi]() {
            Mat g = out->grad;
            for (Eigen::Index i = 0; i < g.size(); ++i) {
                if (!(a->val(i) > lo && a->val(i) < hi)) g(i) = 0.0;
            }
            a->accumulate(g);
        };
    }
    return out;
}

Node* Graph::kl_masked_mean(Node* mu_s, Node* lv_s, const Mat& tgt_mu, const Mat& tgt_lv,
                            const std::vector<std::size_t>& rows) {
    if (mu_s->val.rows() != tgt_mu.rows() || mu_s->val.cols() != tgt_mu.cols() ||
        lv_s->val.rows() != tgt_lv.rows() || lv_s->val.cols() != tgt_lv.cols()) {
        throw contract_error("kl_masked_mean: shape mismatch");
    }
    double acc = 0.0;
    for (std::size_t r : rows) {
        const auto i = static_cast<Eigen::Index>(r);
        for (Eigen::Index k = 0; k < mu_s->val.cols(); ++k) {
            const double lp = lv_s->val(i, k), lq = tgt_lv(i, k);
            const double dm = mu_s->val(i, k) - tgt_mu(i, k);
            acc += lq - lp + std::exp(lp - lq) + dm * dm * std::exp(-lq) - 1.0;
        }
    }
    const double inv_n = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
    Mat v(1, 1);
    v(0, 0) = 0.5 * acc * inv_n;
    Node* out = make(std::move(v), (mu_s->requires_grad || lv_s->requires_grad) && !rows.empty());
    if (out->requires_grad) {
        out->backward = [mu_s, lv_s, tgt_mu, tgt_lv, rows, inv_n, out]() {
            const double c = out->grad(0, 0) * inv_n;
            Mat gmu = Mat::Zero(mu_s->val.rows(), mu_s->val.cols());
            Mat glv = Mat::Zero(lv_s->val.rows(), lv_s->val.cols());
            for (std::size_t r : rows) {
                const auto i = static_cast<Eigen::Index>(r);
                for (Eigen::Index k = 0; k < gmu.cols(); ++k) {
                    const double inv_vq = std::exp(-tgt_lv(i, k));
                    const double dm = mu_s->val(i, k) - tgt_mu(i, k);
                    gmu(i, k) = c * dm * inv_vq;
                    glv(i, k) = c * 0.5 * (std::exp(lv_s->val(i, k)) * inv_vq - 1.0);
                }
            }
            if (mu_s->requires_grad) mu_s->accumulate(gmu);
            if (lv_s->requires_grad) lv_s->accumulate(glv);
        };
    }
    return out;
}

Node* Graph::pool_mu(Node* mu) {
    const double inv_l = 1.0 / static_cast<double>(mu->val.rows());
    Node* out = make(mu->val.colwise().mean(), mu->requires_grad);
    if (out->requires_grad) {
        out->backward = [mu, out, inv_l]() {
            Mat g(mu->val.rows(), mu->val.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) = out->grad.row(0) * inv_l;
            mu->accumulate(g);
        };
    }
    return out;
}

Node* Graph::pool_log_var(Node* mu, Node* lv) {
    const Eigen::Index L = mu->val.rows(), d = mu->val.cols();
    const double inv_l = 1.0 / static_cast<double>(L);
    const double var_floor = std::exp(kLogVarMin);
    Eigen::RowVectorXd mean = mu->val.colwise().mean();
    Eigen::RowVectorXd var(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        double second = 0.0;
        for (Eigen::Index i = 0; i < L; ++i) {
            second += std::exp(lv->val(i, k)) + mu->val(i, k) * mu->val(i, k);
        }
        var[k] = second * inv_l - mean[k] * mean[k];
    }
    Mat v(1, d);
    std::vector<bool> saturated(static_cast<std::size_t>(d), false);
    for (Eigen::Index k = 0; k < d; ++k) {
        double raw = var[k];
        if (raw <= var_floor) {
            raw = var_floor;
            saturated[static_cast<std::size_t>(k)] = true;
        }
        double out_lv = std::log(raw);
        if (out_lv >= kLogVarMax) {
            out_lv = kLogVarMax;
            saturated[static_cast<std::size_t>(k)] = true;
        }
        v(0, k) = out_lv;
    }
    Node* out = make(std::move(v), mu->requires_grad || lv->requires_grad);
    if (out->requires_grad) {
        out->backward = [mu, lv, out, mean, var, saturated, inv_l]() {
            Mat gmu = Mat::Zero(mu->val.rows(), mu->val.cols());
            Mat glv = Mat::Zero(lv->val.rows(), lv->val.cols());
            for (Eigen::Index k = 0; k < gmu.cols(); ++k) {
                if (saturated[static_cast<std::size_t>(k)]) continue;
                const double dvar = out->grad(0, k) / var[k];
                for (Eigen::Index i = 0; i < gmu.rows(); ++i) {
                    gmu(i, k) = dvar * 2.0 * inv_l * (mu->val(i, k) - mean[k]);
                    glv(i, k) = dvar * inv_l * std::exp(lv->val(i, k));
                }
            }
            if (mu->requires_grad) mu->accumulate(gmu);
            if (lv->requires_grad) lv->accumulate(glv);
        };
    }
    return out;
}

Node* Graph::w2_pair(Node* mu_p, Node* lv_p, Node* mu_q, Node* lv_q) {
    const Eigen::Index d = mu_p->val.cols();
    if (mu_p->val.rows() != 1 || mu_q->val.rows() != 1 || lv_p->val.cols() != d ||
        mu_q->val.cols() != d || lv_q->val.cols() != d) {
        throw contract_error("w2_pair: expects matching 1 x d rows");
    }
    double acc = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double dm = mu_p->val(0, k) - mu_q->val(0, k);
        const double ds = std::exp(0.5 * lv_p->val(0, k)) - std::exp(0.5 * lv_q->val(0, k));
        acc += dm * dm + ds * ds;
    }
    Mat v(1, 1);
    v(0, 0) = std::sqrt(acc);
    Node* out = make(std::move(v), mu_p->requires_grad || lv_p->requires_grad ||
                                       mu_q->requires_grad || lv_q->requires_grad);
    if (out->requires_grad) {
        out->backward = [mu_p, lv_p, mu_q, lv_q, out]() {
            const double w = out->val(0, 0);
            if (w < 1e-300) return;  // non-smooth point, no useful direction
            const double c = out->grad(0, 0) / w;
            const Eigen::Index d2 = mu_p->val.cols();
            Mat gmp(1, d2), glp(1, d2), gmq(1, d2), glq(1, d2);
            for (Eigen::Index k = 0; k < d2; ++k) {
                const double dm = mu_p->val(0, k) - mu_q->val(0, k);
                const double sp = std::exp(0.5 * lv_p->val(0, k));
                const double sq = std::exp(0.5 * lv_q->val(0, k));
                const double ds = sp - sq;
                gmp(0, k) = c * dm;
                gmq(0, k) = -c * dm;
                glp(0, k) = c * ds * 0.5 * sp;
                glq(0, k) = -c * ds * 0.5 * sq;
            }
            if (mu_p->requires_grad) mu_p->accumulate(gmp);
            if (lv_p->requires_grad) lv_p->accumulate(glp);
            if (mu_q->requires_grad) mu_q->accumulate(gmq);
            if (lv_q->requires_grad) lv_q->accumulate(glq);
        };
    }
    return out;
}

void Graph::backward(Node* root, double seed) {
    if (root->val.rows() != 1 || root->val.cols() != 1) {
        throw contract_error("backward: root must be scalar");
    }
    Mat s(1, 1);
    s(0, 0) = seed;
    root->accumulate(s);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = it->get();
        if (n->requires_grad && n->has_grad() && n->backward) n->backward();
    }
    for (auto& [node, sink] : param_sinks_) {
        if (node->has_grad()) *sink += node->grad;
        node->grad.setZero();
    }
}

}  // namespace dmlm::ag
