#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "dmlm/autograd.hpp"
#include "dmlm/gaussian.hpp"
#include "dmlm/rng.hpp"

using namespace dmlm;
using ag::Graph;
using ag::Mat;
using ag::Node;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * (2.0 * rng.uniform01() - 1.0);
    return m;
}

// Central-difference check of d(scalar out)/d(every entry of each input).
// build() must construct the graph from the current input values and
// return the scalar root.
void check_grads(std::vector<Mat*> inputs,
                 const std::function<Node*(Graph&, std::vector<Node*>&)>& build,
                 double tol = 1e-6, double h = 1e-6) {
    // Analytic pass.
    std::vector<Mat> grads;
    {
        Graph g;
        std::vector<Node*> nodes;
        std::vector<Mat> sinks;
        sinks.reserve(inputs.size());
        for (Mat* in : inputs) sinks.push_back(Mat::Zero(in->rows(), in->cols()));
        for (std::size_t i = 0; i < inputs.size(); ++i) nodes.push_back(g.param(*inputs[i], &sinks[i]));
        Node* root = build(g, nodes);
        g.backward(root);
        grads = sinks;
    }
    auto eval = [&]() {
        Graph g;
        std::vector<Node*> nodes;
        for (Mat* in : inputs) nodes.push_back(g.constant(*in));
        return build(g, nodes)->val(0, 0);
    };
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Mat& m = *inputs[i];
        for (Eigen::Index k = 0; k < m.size(); ++k) {
            const double orig = m(k);
            m(k) = orig + h;
            const double up = eval();
            m(k) = orig - h;
            const double dn = eval();
            m(k) = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double got = grads[i](k);
            const double denom = std::max({std::fabs(fd), std::fabs(got), 1.0});
            INFO("input ", i, " entry ", k, " fd=", fd, " got=", got);
            CHECK(std::fabs(fd - got) / denom <= tol);
        }
    }
}

Node* sum_all(Graph& g, Node* a) {
    // Reduce to scalar via ones * a * ones.
    Node* left = g.constant(Mat::Ones(1, a->val.rows()));
    Node* right = g.constant(Mat::Ones(a->val.cols(), 1));
    return g.matmul(g.matmul(left, a), right);
}

}  // namespace

TEST_CASE("matmul/add/sub/cmul/scale gradients") {
    Rng rng(1);
    Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 4, 2), c = random_mat(rng, 3, 2);
    check_grads({&a, &b, &c}, [](Graph& g, std::vector<Node*>& n) {
        Node* m = g.matmul(n[0], n[1]);
        Node* s = g.add(g.sub(m, n[2]), n[2]);
        Node* p = g.cmul(s, g.scale(n[2], 0.5));
        return sum_all(g, p);
    });
}

TEST_CASE("add_rowvec and transpose gradients") {
    Rng rng(2);
    Mat a = random_mat(rng, 4, 3), r = random_mat(rng, 1, 3);
    check_grads({&a, &r}, [](Graph& g, std::vector<Node*>& n) {
        return sum_all(g, g.transpose(g.cmul(g.add_rowvec(n[0], n[1]), n[0])));
    });
}

TEST_CASE("gelu gradient") {
    Rng rng(3);
    Mat a = random_mat(rng, 3, 5, 2.0);
    check_grads({&a}, [](Graph& g, std::vector<Node*>& n) {
        return sum_all(g, g.cmul(g.gelu(n[0]), n[0]));
    }, 1e-5);
}

TEST_CASE("softmax_rows gradient and normalization") {
    Rng rng(4);
    Mat a = random_mat(rng, 3, 6, 3.0);
    {
        Graph g;
        Node* s = g.softmax_rows(g.constant(a));
        for (Eigen::Index i = 0; i < s->val.rows(); ++i) {
            CHECK(s->val.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    Mat w = random_mat(rng, 3, 6);
    check_grads({&a, &w}, [](Graph& g, std::vector<Node*>& n) {
        return sum_all(g, g.cmul(g.softmax_rows(n[0]), n[1]));
    }, 1e-5);
}

TEST_CASE("layer_norm gradient") {
    Rng rng(5);
    Mat a = random_mat(rng, 4, 6, 2.0);
    Mat gain = random_mat(rng, 1, 6);
    Mat bias = random_mat(rng, 1, 6);
    Mat w = random_mat(rng, 4, 6);
    check_grads({&a, &gain, &bias, &w}, [](Graph& g, std::vector<Node*>& n) {
        return sum_all(g, g.cmul(g.layer_norm(n[0], n[1], n[2]), n[3]));
    }, 1e-5);
}

TEST_CASE("slice/concat/gather/row_replace/clamp gradients") {
    Rng rng(6);
    Mat table = random_mat(rng, 7, 4);
    Mat m = random_mat(rng, 1, 4);
    Mat w = random_mat(rng, 5, 6);
    std::vector<int> ids = {2, 0, 6, 2, 5};
    std::vector<std::size_t> rows = {1, 3};
    check_grads({&table, &m, &w}, [&](Graph& g, std::vector<Node*>& n) {
        Node* x = g.gather_rows(n[0], ids);
        x = g.row_replace(x, rows, n[1]);
        Node* left = g.slice_cols(x, 0, 2);
        Node* cat = g.concat_cols(x, left);
        Node* cl = g.clamp(cat, -0.75, 0.75);
        return sum_all(g, g.cmul(cl, n[2]));
    }, 1e-5);
}

TEST_CASE("clamp zeroes gradient outside range") {
    Mat a(1, 3);
    a << -2.0, 0.0, 2.0;
    Graph g;
    Mat sink = Mat::Zero(1, 3);
    Node* n = g.param(a, &sink);
    Node* c = g.clamp(n, -1.0, 1.0);
    g.backward(sum_all(g, c));
    CHECK(sink(0, 0) == 0.0);
    CHECK(sink(0, 1) == 1.0);
    CHECK(sink(0, 2) == 0.0);
    CHECK(c->val(0, 0) == -1.0);
    CHECK(c->val(0, 2) == 1.0);
}

TEST_CASE("kl_masked_mean value and gradient") {
    Rng rng(7);
    Mat mu_s = random_mat(rng, 5, 3);
    Mat lv_s = random_mat(rng, 5, 3, 0.5);
    Mat tgt_mu = random_mat(rng, 5, 3);
    Mat tgt_lv = random_mat(rng, 5, 3, 0.5);
    std::vector<std::size_t> mask = {0, 2, 4};

    // Value equals the mean of per-row kl_diag over masked rows.
    {
        Graph g;
        Node* out = g.kl_masked_mean(g.constant(mu_s), g.constant(lv_s), tgt_mu, tgt_lv, mask);
        double expect = 0.0;
        for (std::size_t r : mask) {
            const auto i = static_cast<Eigen::Index>(r);
            expect += kl_diag(DiagGaussian(mu_s.row(i).transpose(), lv_s.row(i).transpose()),
                              DiagGaussian(tgt_mu.row(i).transpose(), tgt_lv.row(i).transpose()));
        }
        expect /= static_cast<double>(mask.size());
        CHECK(out->val(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    }

    check_grads({&mu_s, &lv_s}, [&](Graph& g, std::vector<Node*>& n) {
        return g.kl_masked_mean(n[0], n[1], tgt_mu, tgt_lv, mask);
    }, 1e-5);

    // Unmasked rows receive no gradient.
    {
        Graph g;
        Mat gm = Mat::Zero(5, 3), gl = Mat::Zero(5, 3);
        Node* a = g.param(mu_s, &gm);
        Node* b = g.param(lv_s, &gl);
        g.backward(g.kl_masked_mean(a, b, tgt_mu, tgt_lv, mask));
        CHECK(gm.row(1).cwiseAbs().sum() == 0.0);
        CHECK(gm.row(3).cwiseAbs().sum() == 0.0);
        CHECK(gl.row(1).cwiseAbs().sum() == 0.0);
        CHECK(gm.row(0).cwiseAbs().sum() > 0.0);
    }
}

TEST_CASE("pooling ops match pool_sequence and have correct gradients") {
    Rng rng(8);
    Mat mu = random_mat(rng, 6, 4);
    Mat lv = random_mat(rng, 6, 4, 0.5);
    {
        Graph g;
        Node* pm = g.pool_mu(g.constant(mu));
        Node* pl = g.pool_log_var(g.constant(mu), g.constant(lv));
        const auto pooled = pool_sequence(GaussianSequence(mu, lv));
        CHECK(pm->val.transpose().isApprox(pooled.mu, 1e-12));
        CHECK(pl->val.transpose().isApprox(pooled.log_var, 1e-12));
    }
    Mat w = random_mat(rng, 1, 4);
    check_grads({&mu, &lv, &w}, [](Graph& g, std::vector<Node*>& n) {
        Node* pm = g.pool_mu(n[0]);
        Node* pl = g.pool_log_var(n[0], n[1]);
        return sum_all(g, g.cmul(g.add(pm, pl), n[2]));
    }, 1e-5);
}

TEST_CASE("w2_pair matches w2_diag and has correct gradients") {
    Rng rng(9);
    Mat mu_p = random_mat(rng, 1, 4), lv_p = random_mat(rng, 1, 4, 0.5);
    Mat mu_q = random_mat(rng, 1, 4, 2.0), lv_q = random_mat(rng, 1, 4, 0.5);
    {
        Graph g;
        Node* w = g.w2_pair(g.constant(mu_p), g.constant(lv_p), g.constant(mu_q),
                            g.constant(lv_q));
        const double expect = w2_diag(DiagGaussian(mu_p.transpose(), lv_p.transpose()),
                                      DiagGaussian(mu_q.transpose(), lv_q.transpose()));
        CHECK(w->val(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
    check_grads({&mu_p, &lv_p, &mu_q, &lv_q}, [](Graph& g, std::vector<Node*>& n) {
        return g.w2_pair(n[0], n[1], n[2], n[3]);
    }, 1e-5);
}

TEST_CASE("constants block gradient flow (stop-gradient)") {
    Rng rng(10);
    Mat a = random_mat(rng, 2, 2);
    Graph g;
    Mat sink = Mat::Zero(2, 2);
    Node* p = g.param(a, &sink);
    Node* frozen = g.constant(p->val);  // detached copy
    Node* out = sum_all(g, g.cmul(frozen, frozen));
    g.backward(out);
    CHECK(sink.cwiseAbs().sum() == 0.0);
}
