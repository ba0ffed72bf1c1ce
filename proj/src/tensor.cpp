#include "mbsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mbsl/errors.hpp"

namespace mbsl {

namespace {

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.recording()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Marks the output as grad-carrying and pre-allocates grad buffers so the
// backward closures can accumulate without checks.
void prepare_grads(Tensor& out, std::initializer_list<Tensor*> inputs) {
    out.set_requires_grad(true);
    out.grad();
    for (Tensor* t : inputs) {
        if (t->requires_grad()) t->grad();
    }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Impl& Tensor::impl() {
    if (!impl_) throw ContractError("use of undefined tensor");
    return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return *impl_;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    const std::int64_t n = shape_size(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<std::size_t>(n), value);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    const std::int64_t n = shape_size(shape);
    if (n != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return impl().shape; }
int Tensor::ndim() const { return static_cast<int>(impl().shape.size()); }

int Tensor::dim(int axis) const {
    const auto& s = impl().shape;
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(impl().data.size()); }

std::vector<double>& Tensor::data() { return impl().data; }
const std::vector<double>& Tensor::data() const { return impl().data; }

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

std::vector<double>& Tensor::grad() {
    auto& im = impl();
    if (im.grad.size() != im.data.size()) im.grad.assign(im.data.size(), 0.0);
    return im.grad;
}

const std::vector<double>& Tensor::grad() const {
    const auto& im = impl();
    if (im.grad.size() != im.data.size()) {
        throw ContractError("gradient not populated");
    }
    return im.grad;
}

bool Tensor::has_grad() const { return impl().grad.size() == impl().data.size(); }

void Tensor::zero_grad() {
    auto& im = impl();
    im.grad.assign(im.data.size(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl().data[0];
}

bool Tensor::all_finite() const {
    for (double v : impl().data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- Tape ------------------------------------------------------------------

void Tape::record(std::function<void()> backward_fn) {
    if (recording_) ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (!recording_) throw ContractError("backward on a non-recording tape");
    if (consumed_) throw ContractError("backward called twice without reset");
    if (loss.size() != 1) throw ContractError("backward requires a scalar loss");
    consumed_ = true;
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        (*it)();
    }
}

void Tape::reset() {
    ops_.clear();
    consumed_ = false;
}

// ---- elementwise ops -------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (wants_grad(tape, {&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        prepare_grads(oc, {&ac, &bc});
        tape.record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (wants_grad(tape, {&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        prepare_grads(oc, {&ac, &bc});
        tape.record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (wants_grad(tape, {&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        prepare_grads(oc, {&ac, &bc});
        tape.record([ac, bc, oc]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv2 = bc.data();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av2 = ac.data();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc, factor]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc]() mutable {
            const auto& g = oc.grad();
            const auto& av2 = ac.data();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (av2[i] > 0.0) ga[i] += g[i];
            }
        });
    }
    return out;
}

// ---- conv / linear ----------------------------------------------------------

Tensor conv1d_causal(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias,
                     int dilation) {
    if (dilation < 1) throw ParameterError("conv1d_causal: dilation must be >= 1");
    if (input.ndim() != 2) throw DimensionError("conv1d_causal: input must be [C_in x L]");
    if (weights.ndim() != 3) throw DimensionError("conv1d_causal: weights must be [C_out x C_in x K]");
    const int c_in = input.dim(0);
    const int len = input.dim(1);
    const int c_out = weights.dim(0);
    const int kernel = weights.dim(2);
    if (weights.dim(1) != c_in) {
        throw DimensionError("conv1d_causal: weight C_in " + std::to_string(weights.dim(1)) +
                             " does not match input channels " + std::to_string(c_in));
    }
    if (bias.ndim() != 1 || bias.dim(0) != c_out) {
        throw DimensionError("conv1d_causal: bias must be [C_out]");
    }

    Tensor out = Tensor::zeros({c_out, len});
    const auto& x = input.data();
    const auto& w = weights.data();
    const auto& b = bias.data();
    auto& y = out.data();
    // Kernel tap k multiplies x[., t - (K-1-k)*dilation]; the last tap sits on
    // the current timestamp, positions before t=0 read as zero.
    for (int o = 0; o < c_out; ++o) {
        double* yo = y.data() + static_cast<std::size_t>(o) * len;
        for (int t = 0; t < len; ++t) yo[t] = b[o];
        for (int i = 0; i < c_in; ++i) {
            const double* xi = x.data() + static_cast<std::size_t>(i) * len;
            const double* wo = w.data() + (static_cast<std::size_t>(o) * c_in + i) * kernel;
            for (int k = 0; k < kernel; ++k) {
                const int shift = (kernel - 1 - k) * dilation;
                const double wk = wo[k];
                if (wk == 0.0) continue;
                for (int t = shift; t < len; ++t) yo[t] += wk * xi[t - shift];
            }
        }
    }

    if (wants_grad(tape, {&input, &weights, &bias})) {
        Tensor xc = input, wc = weights, bc = bias, oc = out;
        prepare_grads(oc, {&xc, &wc, &bc});
        tape.record([xc, wc, bc, oc, c_in, c_out, len, kernel, dilation]() mutable {
            const auto& g = oc.grad();
            const auto& x2 = xc.data();
            const auto& w2 = wc.data();
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (int o = 0; o < c_out; ++o) {
                    const double* go = g.data() + static_cast<std::size_t>(o) * len;
                    double s = 0.0;
                    for (int t = 0; t < len; ++t) s += go[t];
                    gb[o] += s;
                }
            }
            if (wc.requires_grad()) {
                auto& gw = wc.grad();
                for (int o = 0; o < c_out; ++o) {
                    const double* go = g.data() + static_cast<std::size_t>(o) * len;
                    for (int i = 0; i < c_in; ++i) {
                        const double* xi = x2.data() + static_cast<std::size_t>(i) * len;
                        double* gwo = gw.data() + (static_cast<std::size_t>(o) * c_in + i) * kernel;
                        for (int k = 0; k < kernel; ++k) {
                            const int shift = (kernel - 1 - k) * dilation;
                            double s = 0.0;
                            for (int t = shift; t < len; ++t) s += go[t] * xi[t - shift];
                            gwo[k] += s;
                        }
                    }
                }
            }
            if (xc.requires_grad()) {
                auto& gx = xc.grad();
                for (int o = 0; o < c_out; ++o) {
                    const double* go = g.data() + static_cast<std::size_t>(o) * len;
                    for (int i = 0; i < c_in; ++i) {
                        double* gxi = gx.data() + static_cast<std::size_t>(i) * len;
                        const double* wo = w2.data() + (static_cast<std::size_t>(o) * c_in + i) * kernel;
                        for (int k = 0; k < kernel; ++k) {
                            const int shift = (kernel - 1 - k) * dilation;
                            const double wk = wo[k];
                            if (wk == 0.0) continue;
                            for (int t = shift; t < len; ++t) gxi[t - shift] += go[t] * wk;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor linear(Tape& tape, const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (weights.ndim() != 2) throw DimensionError("linear: weights must be [D_out x D_in]");
    const int d_out = weights.dim(0);
    const int d_in = weights.dim(1);
    if (input.ndim() < 1 || input.shape().back() != d_in) {
        throw DimensionError("linear: trailing input dimension must equal D_in=" +
                             std::to_string(d_in));
    }
    if (bias.ndim() != 1 || bias.dim(0) != d_out) throw DimensionError("linear: bias must be [D_out]");

    std::vector<int> out_shape = input.shape();
    out_shape.back() = d_out;
    const std::int64_t rows = input.size() / d_in;

    Tensor out = Tensor::zeros(out_shape);
    const auto& x = input.data();
    const auto& w = weights.data();
    const auto& b = bias.data();
    auto& y = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d_in;
        double* yr = y.data() + r * d_out;
        for (int o = 0; o < d_out; ++o) {
            const double* wo = w.data() + static_cast<std::size_t>(o) * d_in;
            double s = b[o];
            for (int i = 0; i < d_in; ++i) s += wo[i] * xr[i];
            yr[o] = s;
        }
    }

    if (wants_grad(tape, {&input, &weights, &bias})) {
        Tensor xc = input, wc = weights, bc = bias, oc = out;
        prepare_grads(oc, {&xc, &wc, &bc});
        tape.record([xc, wc, bc, oc, rows, d_in, d_out]() mutable {
            const auto& g = oc.grad();
            const auto& x2 = xc.data();
            const auto& w2 = wc.data();
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d_out;
                    for (int o = 0; o < d_out; ++o) gb[o] += gr[o];
                }
            }
            if (wc.requires_grad()) {
                auto& gw = wc.grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d_out;
                    const double* xr = x2.data() + r * d_in;
                    for (int o = 0; o < d_out; ++o) {
                        double* gwo = gw.data() + static_cast<std::size_t>(o) * d_in;
                        const double go = gr[o];
                        if (go == 0.0) continue;
                        for (int i = 0; i < d_in; ++i) gwo[i] += go * xr[i];
                    }
                }
            }
            if (xc.requires_grad()) {
                auto& gx = xc.grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * d_out;
                    double* gxr = gx.data() + r * d_in;
                    for (int o = 0; o < d_out; ++o) {
                        const double* wo = w2.data() + static_cast<std::size_t>(o) * d_in;
                        const double go = gr[o];
                        if (go == 0.0) continue;
                        for (int i = 0; i < d_in; ++i) gxr[i] += go * wo[i];
                    }
                }
            }
        });
    }
    return out;
}

// ---- pooling / shape ops -----------------------------------------------------

Tensor mean_pool(Tape& tape, const Tensor& input, int window) {
    if (window < 1) throw ParameterError("mean_pool: window must be >= 1");
    if (input.ndim() != 2) throw DimensionError("mean_pool: input must be [C x L]");
    const int channels = input.dim(0);
    const int len = input.dim(1);
    const int out_len = (len + window - 1) / window;

    Tensor out = Tensor::zeros({channels, out_len});
    const auto& x = input.data();
    auto& y = out.data();
    for (int c = 0; c < channels; ++c) {
        const double* xc = x.data() + static_cast<std::size_t>(c) * len;
        double* yc = y.data() + static_cast<std::size_t>(c) * out_len;
        for (int j = 0; j < out_len; ++j) {
            const int start = j * window;
            const int stop = std::min(len, start + window);
            double s = 0.0;
            for (int t = start; t < stop; ++t) s += xc[t];
            yc[j] = s / (stop - start);
        }
    }

    if (wants_grad(tape, {&input})) {
        Tensor xc2 = input, oc = out;
        prepare_grads(oc, {&xc2});
        tape.record([xc2, oc, channels, len, out_len, window]() mutable {
            const auto& g = oc.grad();
            auto& gx = xc2.grad();
            for (int c = 0; c < channels; ++c) {
                const double* gc = g.data() + static_cast<std::size_t>(c) * out_len;
                double* gxc = gx.data() + static_cast<std::size_t>(c) * len;
                for (int j = 0; j < out_len; ++j) {
                    const int start = j * window;
                    const int stop = std::min(len, start + window);
                    const double share = gc[j] / (stop - start);
                    for (int t = start; t < stop; ++t) gxc[t] += share;
                }
            }
        });
    }
    return out;
}

Tensor mean_pool_to(Tape& tape, const Tensor& input, int out_len) {
    if (out_len < 1) throw ParameterError("mean_pool_to: out_len must be >= 1");
    if (input.ndim() != 2) throw DimensionError("mean_pool_to: input must be [C x L]");
    const int channels = input.dim(0);
    const int len = input.dim(1);
    if (out_len > len) throw ParameterError("mean_pool_to: out_len exceeds input length");

    Tensor out = Tensor::zeros({channels, out_len});
    const auto& x = input.data();
    auto& y = out.data();
    for (int c = 0; c < channels; ++c) {
        const double* xc = x.data() + static_cast<std::size_t>(c) * len;
        double* yc = y.data() + static_cast<std::size_t>(c) * out_len;
        for (int j = 0; j < out_len; ++j) {
            const int start = static_cast<int>((static_cast<std::int64_t>(j) * len) / out_len);
            const int stop = static_cast<int>((static_cast<std::int64_t>(j + 1) * len) / out_len);
            double s = 0.0;
            for (int t = start; t < stop; ++t) s += xc[t];
            yc[j] = s / (stop - start);
        }
    }

    if (wants_grad(tape, {&input})) {
        Tensor xc2 = input, oc = out;
        prepare_grads(oc, {&xc2});
        tape.record([xc2, oc, channels, len, out_len]() mutable {
            const auto& g = oc.grad();
            auto& gx = xc2.grad();
            for (int c = 0; c < channels; ++c) {
                const double* gc = g.data() + static_cast<std::size_t>(c) * out_len;
                double* gxc = gx.data() + static_cast<std::size_t>(c) * len;
                for (int j = 0; j < out_len; ++j) {
                    const int start = static_cast<int>((static_cast<std::int64_t>(j) * len) / out_len);
                    const int stop = static_cast<int>((static_cast<std::int64_t>(j + 1) * len) / out_len);
                    const double share = gc[j] / (stop - start);
                    for (int t = start; t < stop; ++t) gxc[t] += share;
                }
            }
        });
    }
    return out;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& tensors, int axis) {
    if (tensors.empty()) throw ParameterError("concat: empty tensor list");
    const int nd = tensors[0].ndim();
    if (axis < 0 || axis >= nd) throw DimensionError("concat: axis out of range");
    std::vector<int> out_shape = tensors[0].shape();
    int axis_total = 0;
    for (const Tensor& t : tensors) {
        if (t.ndim() != nd) throw DimensionError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d) {
            if (d != axis && t.dim(d) != out_shape[static_cast<std::size_t>(d)]) {
                throw DimensionError("concat: incompatible shapes off the concat axis");
            }
        }
        axis_total += t.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;

    // outer = product of dims before axis, inner = product after.
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

    Tensor out = Tensor::zeros(out_shape);
    auto& y = out.data();
    std::int64_t offset = 0;
    for (const Tensor& t : tensors) {
        const std::int64_t block = static_cast<std::int64_t>(t.dim(axis)) * inner;
        const auto& x = t.data();
        for (std::int64_t r = 0; r < outer; ++r) {
            std::copy(x.begin() + r * block, x.begin() + (r + 1) * block,
                      y.begin() + r * axis_total * inner + offset);
        }
        offset += block;
    }

    bool any_grad = false;
    for (const Tensor& t : tensors) any_grad = any_grad || t.requires_grad();
    if (tape.recording() && any_grad) {
        std::vector<Tensor> parts = tensors;
        Tensor oc = out;
        oc.set_requires_grad(true);
        oc.grad();
        for (Tensor& p : parts) {
            if (p.requires_grad()) p.grad();
        }
        tape.record([parts, oc, outer, inner, axis, axis_total]() mutable {
            const auto& g = oc.grad();
            std::int64_t offset2 = 0;
            for (Tensor& p : parts) {
                const std::int64_t block = static_cast<std::int64_t>(p.dim(axis)) * inner;
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    for (std::int64_t r = 0; r < outer; ++r) {
                        const double* src = g.data() + r * axis_total * inner + offset2;
                        double* dst = gp.data() + r * block;
                        for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                }
                offset2 += block;
            }
        });
    }
    return out;
}

Tensor l2_normalize(Tape& tape, const Tensor& input) {
    if (input.ndim() != 1) throw DimensionError("l2_normalize: input must be 1-D");
    Tensor row = reshape(tape, input, {1, input.dim(0)});
    Tensor normed = l2_normalize_rows(tape, row);
    return reshape(tape, normed, {input.dim(0)});
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& input) {
    if (input.ndim() != 2) throw DimensionError("l2_normalize_rows: input must be [N x D]");
    const int n = input.dim(0);
    const int d = input.dim(1);
    Tensor out = Tensor::zeros({n, d});
    std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
    const auto& x = input.data();
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * d;
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += xr[i] * xr[i];
        const double norm = std::sqrt(s);
        if (norm <= 1e-12) {
            throw DegenerateInputError("l2_normalize: near-zero vector (row " + std::to_string(r) +
                                       ")");
        }
        norms[static_cast<std::size_t>(r)] = norm;
        double* yr = y.data() + static_cast<std::size_t>(r) * d;
        for (int i = 0; i < d; ++i) yr[i] = xr[i] / norm;
    }

    if (wants_grad(tape, {&input})) {
        Tensor xc = input, oc = out;
        prepare_grads(oc, {&xc});
        tape.record([xc, oc, norms, n, d]() mutable {
            // d(x/||x||) = (g - y * (y . g)) / ||x||
            const auto& g = oc.grad();
            const auto& y2 = oc.data();
            auto& gx = xc.grad();
            for (int r = 0; r < n; ++r) {
                const double* gr = g.data() + static_cast<std::size_t>(r) * d;
                const double* yr = y2.data() + static_cast<std::size_t>(r) * d;
                double* gxr = gx.data() + static_cast<std::size_t>(r) * d;
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += yr[i] * gr[i];
                const double inv = 1.0 / norms[static_cast<std::size_t>(r)];
                for (int i = 0; i < d; ++i) gxr[i] += (gr[i] - yr[i] * dot) * inv;
            }
        });
    }
    return out;
}

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul: both operands must be 2-D");
    const int n = a.dim(0), k = a.dim(1);
    if (b.dim(0) != k) throw DimensionError("matmul: inner dimensions disagree");
    const int m = b.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        const double* ar = av.data() + static_cast<std::size_t>(r) * k;
        double* yr = y.data() + static_cast<std::size_t>(r) * m;
        for (int i = 0; i < k; ++i) {
            const double ai = ar[i];
            if (ai == 0.0) continue;
            const double* bi = bv.data() + static_cast<std::size_t>(i) * m;
            for (int c = 0; c < m; ++c) yr[c] += ai * bi[c];
        }
    }
    if (wants_grad(tape, {&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        prepare_grads(oc, {&ac, &bc});
        tape.record([ac, bc, oc, n, k, m]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv2 = bc.data();
                for (int r = 0; r < n; ++r) {
                    const double* gr = g.data() + static_cast<std::size_t>(r) * m;
                    double* gar = ga.data() + static_cast<std::size_t>(r) * k;
                    for (int i = 0; i < k; ++i) {
                        const double* bi = bv2.data() + static_cast<std::size_t>(i) * m;
                        double s = 0.0;
                        for (int c = 0; c < m; ++c) s += gr[c] * bi[c];
                        gar[i] += s;
                    }
                }
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av2 = ac.data();
                for (int r = 0; r < n; ++r) {
                    const double* gr = g.data() + static_cast<std::size_t>(r) * m;
                    const double* ar = av2.data() + static_cast<std::size_t>(r) * k;
                    for (int i = 0; i < k; ++i) {
                        const double ai = ar[i];
                        if (ai == 0.0) continue;
                        double* gbi = gb.data() + static_cast<std::size_t>(i) * m;
                        for (int c = 0; c < m; ++c) gbi[c] += ai * gr[c];
                    }
                }
            }
        });
    }
    return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul_nt: both operands must be 2-D");
    const int n = a.dim(0), d = a.dim(1);
    if (b.dim(1) != d) throw DimensionError("matmul_nt: trailing dimensions disagree");
    const int m = b.dim(0);
    Tensor out = Tensor::zeros({n, m});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        const double* ar = av.data() + static_cast<std::size_t>(r) * d;
        double* yr = y.data() + static_cast<std::size_t>(r) * m;
        for (int c = 0; c < m; ++c) {
            const double* bc_ = bv.data() + static_cast<std::size_t>(c) * d;
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += ar[i] * bc_[i];
            yr[c] = s;
        }
    }
    if (wants_grad(tape, {&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        prepare_grads(oc, {&ac, &bc});
        tape.record([ac, bc, oc, n, d, m]() mutable {
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                const auto& bv2 = bc.data();
                for (int r = 0; r < n; ++r) {
                    const double* gr = g.data() + static_cast<std::size_t>(r) * m;
                    double* gar = ga.data() + static_cast<std::size_t>(r) * d;
                    for (int c = 0; c < m; ++c) {
                        const double gv = gr[c];
                        if (gv == 0.0) continue;
                        const double* bc2 = bv2.data() + static_cast<std::size_t>(c) * d;
                        for (int i = 0; i < d; ++i) gar[i] += gv * bc2[i];
                    }
                }
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const auto& av2 = ac.data();
                for (int r = 0; r < n; ++r) {
                    const double* gr = g.data() + static_cast<std::size_t>(r) * m;
                    const double* ar = av2.data() + static_cast<std::size_t>(r) * d;
                    for (int c = 0; c < m; ++c) {
                        const double gv = gr[c];
                        if (gv == 0.0) continue;
                        double* gbc = gb.data() + static_cast<std::size_t>(c) * d;
                        for (int i = 0; i < d; ++i) gbc[i] += gv * ar[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose2d(Tape& tape, const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose2d: input must be 2-D");
    const int n = a.dim(0), m = a.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const auto& x = a.data();
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < m; ++c) {
            y[static_cast<std::size_t>(c) * n + r] = x[static_cast<std::size_t>(r) * m + c];
        }
    }
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc, n, m]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (int c = 0; c < m; ++c) {
                for (int r = 0; r < n; ++r) {
                    ga[static_cast<std::size_t>(r) * m + c] += g[static_cast<std::size_t>(c) * n + r];
                }
            }
        });
    }
    return out;
}

Tensor diag(Tape& tape, const Tensor& a) {
    if (a.ndim() != 2 || a.dim(0) != a.dim(1)) throw DimensionError("diag: input must be square");
    const int n = a.dim(0);
    Tensor out = Tensor::zeros({n});
    const auto& x = a.data();
    auto& y = out.data();
    for (int i = 0; i < n; ++i) y[i] = x[static_cast<std::size_t>(i) * n + i];
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc, n]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (int i = 0; i < n; ++i) ga[static_cast<std::size_t>(i) * n + i] += g[i];
        });
    }
    return out;
}

// ---- reductions --------------------------------------------------------------

Tensor row_logsumexp(Tape& tape, const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("row_logsumexp: input must be [N x M]");
    Tensor ones = Tensor::full(a.shape(), 1.0);
    return row_logsumexp_masked(tape, a, ones);
}

Tensor row_logsumexp_masked(Tape& tape, const Tensor& a, const Tensor& mask01) {
    if (a.ndim() != 2) throw DimensionError("row_logsumexp_masked: input must be [N x M]");
    require_same_shape(a, mask01, "row_logsumexp_masked");
    const int n = a.dim(0), m = a.dim(1);
    Tensor out = Tensor::zeros({n});
    const auto& x = a.data();
    const auto& mk = mask01.data();
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * m;
        const double* mr = mk.data() + static_cast<std::size_t>(r) * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < m; ++c) {
            if (mr[c] != 0.0 && xr[c] > mx) mx = xr[c];
        }
        if (!std::isfinite(mx)) {
            throw ContractError("row_logsumexp_masked: empty mask on row " + std::to_string(r));
        }
        double s = 0.0;
        for (int c = 0; c < m; ++c) {
            if (mr[c] != 0.0) s += std::exp(xr[c] - mx);
        }
        y[r] = mx + std::log(s);
    }
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, mc = mask01, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, mc, oc, n, m]() mutable {
            // d lse / d x_c = softmax weight of x_c within the masked row
            const auto& g = oc.grad();
            const auto& x2 = ac.data();
            const auto& mk2 = mc.data();
            const auto& y2 = oc.data();
            auto& ga = ac.grad();
            for (int r = 0; r < n; ++r) {
                const double gv = g[r];
                if (gv == 0.0) continue;
                const double* xr = x2.data() + static_cast<std::size_t>(r) * m;
                const double* mr = mk2.data() + static_cast<std::size_t>(r) * m;
                double* gar = ga.data() + static_cast<std::size_t>(r) * m;
                for (int c = 0; c < m; ++c) {
                    if (mr[c] != 0.0) gar[c] += gv * std::exp(xr[c] - y2[r]);
                }
            }
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& a) {
    Tensor out = Tensor::zeros({1});
    double s = 0.0;
    for (double v : a.data()) s += v;
    out.data()[0] = s;
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc]() mutable {
            const double g = oc.grad()[0];
            auto& ga = ac.grad();
            for (double& gv : ga) gv += g;
        });
    }
    return out;
}

Tensor mean_all(Tape& tape, const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return scale(tape, sum_all(tape, a), inv);
}

Tensor center_columns(Tape& tape, const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("center_columns: input must be [N x D]");
    const int n = a.dim(0), d = a.dim(1);
    Tensor out = Tensor::zeros({n, d});
    const auto& x = a.data();
    auto& y = out.data();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] += xr[c];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * d;
        double* yr = y.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) yr[c] = xr[c] - mean[static_cast<std::size_t>(c)];
    }
    if (wants_grad(tape, {&a})) {
        Tensor ac = a, oc = out;
        prepare_grads(oc, {&ac});
        tape.record([ac, oc, n, d]() mutable {
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            std::vector<double> gmean(static_cast<std::size_t>(d), 0.0);
            for (int r = 0; r < n; ++r) {
                const double* gr = g.data() + static_cast<std::size_t>(r) * d;
                for (int c = 0; c < d; ++c) gmean[static_cast<std::size_t>(c)] += gr[c];
            }
            for (double& v : gmean) v /= static_cast<double>(n);
            for (int r = 0; r < n; ++r) {
                const double* gr = g.data() + static_cast<std::size_t>(r) * d;
                double* gar = ga.data() + static_cast<std::size_t>(r) * d;
                for (int c = 0; c < d; ++c) gar[c] += gr[c] - gmean[static_cast<std::size_t>(c)];
            }
        });
    }
    return out;
}

Tensor stack_rows(Tape& tape, const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ParameterError("stack_rows: empty list");
    const int d = rows[0].dim(0);
    for (const Tensor& r : rows) {
        if (r.ndim() != 1 || r.dim(0) != d) throw DimensionError("stack_rows: rows must share shape [D]");
    }
    const int n = static_cast<int>(rows.size());
    Tensor out = Tensor::zeros({n, d});
    auto& y = out.data();
    for (int r = 0; r < n; ++r) {
        const auto& x = rows[static_cast<std::size_t>(r)].data();
        std::copy(x.begin(), x.end(), y.begin() + static_cast<std::size_t>(r) * d);
    }
    bool any_grad = false;
    for (const Tensor& r : rows) any_grad = any_grad || r.requires_grad();
    if (tape.recording() && any_grad) {
        std::vector<Tensor> parts = rows;
        Tensor oc = out;
        oc.set_requires_grad(true);
        oc.grad();
        for (Tensor& p : parts) {
            if (p.requires_grad()) p.grad();
        }
        tape.record([parts, oc, d]() mutable {
            const auto& g = oc.grad();
            for (std::size_t r = 0; r < parts.size(); ++r) {
                if (!parts[r].requires_grad()) continue;
                auto& gp = parts[r].grad();
                const double* gr = g.data() + r * static_cast<std::size_t>(d);
                for (int i = 0; i < d; ++i) gp[static_cast<std::size_t>(i)] += gr[i];
            }
        });
    }
    return out;
}

Tensor as_tokens(Tape& tape, const Tensor& input, int patch_len) {
    if (patch_len < 1) throw ParameterError("as_tokens: patch_len must be >= 1");
    if (input.ndim() != 2) throw DimensionError("as_tokens: input must be [C x L]");
    const int channels = input.dim(0);
    const int len = input.dim(1);
    if (len < patch_len) throw ParameterError("as_tokens: input length shorter than patch_len");
    const int tokens = len / patch_len;

    Tensor out = Tensor::zeros({channels, tokens, patch_len});
    const auto& x = input.data();
    auto& y = out.data();
    for (int c = 0; c < channels; ++c) {
        const double* xc = x.data() + static_cast<std::size_t>(c) * len;
        double* yc = y.data() + static_cast<std::size_t>(c) * tokens * patch_len;
        std::copy(xc, xc + static_cast<std::size_t>(tokens) * patch_len, yc);
    }
    if (wants_grad(tape, {&input})) {
        Tensor xc2 = input, oc = out;
        prepare_grads(oc, {&xc2});
        tape.record([xc2, oc, channels, len, tokens, patch_len]() mutable {
            const auto& g = oc.grad();
            auto& gx = xc2.grad();
            for (int c = 0; c < channels; ++c) {
                const double* gc = g.data() + static_cast<std::size_t>(c) * tokens * patch_len;
                double* gxc = gx.data() + static_cast<std::size_t>(c) * len;
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(tokens) * patch_len; ++i) {
                    gxc[i] += gc[i];
                }
            }
        });
    }
    return out;
}

Tensor flatten_tokens(Tape& tape, const Tensor& tokens) {
    if (tokens.ndim() != 3) throw DimensionError("flatten_tokens: input must be [C x T x P]");
    const int channels = tokens.dim(0);
    const int t_count = tokens.dim(1);
    const int patch_len = tokens.dim(2);
    Tensor out = Tensor::zeros({t_count, channels * patch_len});
    const auto& x = tokens.data();
    auto& y = out.data();
    for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < t_count; ++t) {
            const double* src = x.data() + (static_cast<std::size_t>(c) * t_count + t) * patch_len;
            double* dst = y.data() + static_cast<std::size_t>(t) * channels * patch_len +
                          static_cast<std::size_t>(c) * patch_len;
            std::copy(src, src + patch_len, dst);
        }
    }
    if (wants_grad(tape, {&tokens})) {
        Tensor xc = tokens, oc = out;
        prepare_grads(oc, {&xc});
        tape.record([xc, oc, channels, t_count, patch_len]() mutable {
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (int c = 0; c < channels; ++c) {
                for (int t = 0; t < t_count; ++t) {
                    const double* src = g.data() + static_cast<std::size_t>(t) * channels * patch_len +
                                        static_cast<std::size_t>(c) * patch_len;
                    double* dst = gx.data() + (static_cast<std::size_t>(c) * t_count + t) * patch_len;
                    for (int p = 0; p < patch_len; ++p) dst[p] += src[p];
                }
            }
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& input, std::vector<int> new_shape) {
    if (shape_size(new_shape) != input.size()) {
        throw DimensionError("reshape: element count mismatch");
    }
    Tensor out = Tensor::from_data(std::move(new_shape), input.data());
    if (wants_grad(tape, {&input})) {
        Tensor xc = input, oc = out;
        prepare_grads(oc, {&xc});
        tape.record([xc, oc]() mutable {
            const auto& g = oc.grad();
            auto& gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

// ---- Adam ---------------------------------------------------------------------

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw DimensionError("adam_step: params/grads length mismatch");
    }
    if (state.m.empty()) state.m.assign(params.size(), 0.0);
    if (state.v.empty()) state.v.assign(params.size(), 0.0);
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: state length mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

void adam_step(Tensor& param, AdamState& state, const AdamConfig& cfg) {
    adam_step(param.data(), param.grad(), state, cfg);
}

}  // namespace mbsl
