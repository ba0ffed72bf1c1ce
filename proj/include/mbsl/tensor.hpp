#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace mbsl {

// Dense f64 tensor, row-major, with optional participation in reverse-mode
// autodiff via Tape. Copying a Tensor copies the handle, not the storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const;
    int dim(int axis) const;
    std::int64_t size() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    // Gradient buffer (same length as data, zero-initialized on first access).
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void zero_grad();

    double item() const;  // scalar tensors only
    bool all_finite() const;

    // Identity of the underlying storage; used for aliasing checks.
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    Impl& impl();
    const Impl& impl() const;
};

std::int64_t shape_size(const std::vector<int>& shape);

// Records forward operations so they can be replayed in reverse. A Tape
// constructed with recording=false turns every op into plain arithmetic
// (evaluation mode).
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t num_ops() const { return ops_.size(); }

    void record(std::function<void()> backward_fn);

    // Seeds loss.grad with 1 and runs all recorded backward rules in reverse
    // order. A second call without reset() is rejected.
    void backward(const Tensor& loss);
    void reset();

private:
    std::vector<std::function<void()>> ops_;
    bool recording_ = true;
    bool consumed_ = false;
};

// ---- differentiable ops -------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor relu(Tape& tape, const Tensor& a);

// Causal dilated 1-D convolution. input [C_in x L], weights [C_out x C_in x K],
// bias [C_out]. Left zero-padding of (K-1)*dilation keeps the length at L and
// makes output[c, t] depend only on input[:, t'] with t' <= t.
Tensor conv1d_causal(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias,
                     int dilation);

// Affine map along the trailing dimension. input [... x D_in],
// weights [D_out x D_in], bias [D_out].
Tensor linear(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias);

// Non-overlapping window means over the last axis of a [C x L] tensor; the
// final partial window is averaged over its actual length.
Tensor mean_pool(Tape& tape, const Tensor& input, int window);

// Average-pools [C x L] to exactly [C x out_len] using contiguous bins
// [floor(j*L/out), floor((j+1)*L/out)). Coincides with mean_pool(L/out_len)
// when out_len divides L; exists because the windowed form cannot hit an
// exact target length for non-divisible ratios.
Tensor mean_pool_to(Tape& tape, const Tensor& input, int out_len);

Tensor concat(Tape& tape, const std::vector<Tensor>& tensors, int axis);

// x / ||x|| for a 1-D tensor; rejects near-zero inputs (norm <= 1e-12).
Tensor l2_normalize(Tape& tape, const Tensor& input);
// Row-wise variant for [N x D].
Tensor l2_normalize_rows(Tape& tape, const Tensor& input);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);     // [N x K] * [K x M]
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);  // [N x D] * [M x D]^T
Tensor transpose2d(Tape& tape, const Tensor& a);
Tensor diag(Tape& tape, const Tensor& a);  // [N x N] -> [N]

Tensor row_logsumexp(Tape& tape, const Tensor& a);  // [N x M] -> [N]
// Log-sum-exp over entries where mask01 == 1 (mask is a constant, same shape).
Tensor row_logsumexp_masked(Tape& tape, const Tensor& a, const Tensor& mask01);

Tensor sum_all(Tape& tape, const Tensor& a);
Tensor mean_all(Tape& tape, const Tensor& a);

// Subtracts the per-column mean of a [N x D] matrix (zero column means out).
Tensor center_columns(Tape& tape, const Tensor& a);

// Stacks N tensors of shape [D] into [N x D].
Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows);

// [C x L] -> [C x T x P] with T = floor(L / P); the trailing remainder is
// dropped. Token t covers samples [t*P, (t+1)*P).
Tensor as_tokens(Tape& tape, const Tensor& input, int patch_len);

// [C x T x P] -> [T x (C*P)]; row t is the flattened token at position t.
Tensor flatten_tokens(Tape& tape, const Tensor& tokens);

// Same data, new shape (sizes must agree).
Tensor reshape(Tape& tape, const Tensor& input, std::vector<int> new_shape);

// ---- optimizer -----------------------------------------------------------

struct AdamConfig {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

// Standard Adam update with bias correction. State starts at zero moments and
// step 0; shapes of params/grads/state must agree.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg);
void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg);

}  // namespace mbsl
