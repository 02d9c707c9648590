#include "subtyper/tape.hpp"

#include "subtyper/errors.hpp"

#include <cmath>

namespace subtyper {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::leaf(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::record(Matrix value, Pullback pullback) {
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(pullback)});
    return Var(this, nodes_.size() - 1);
}

Matrix Tape::adjoint(Var v) const {
    const Node& node = nodes_[v.id()];
    if (node.adjoint.empty()) {
        return Matrix(node.value.rows(), node.value.cols());
    }
    return node.adjoint;
}

void Tape::accumulate(std::size_t id, const Matrix& grad) {
    Node& node = nodes_[id];
    if (grad.rows() != node.value.rows() || grad.cols() != node.value.cols()) {
        throw ShapeError("Tape::accumulate: gradient " + shape_of(grad) + " for node " + shape_of(node.value));
    }
    if (node.adjoint.empty()) {
        node.adjoint = grad;
        return;
    }
    auto& dst = node.adjoint.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += grad.data()[i];
    }
}

void Tape::backward(Var loss) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
        throw ArgumentError("backward: loss node is not on this tape");
    }
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ArgumentError("backward: loss must be scalar (1x1), got " + shape_of(lv));
    }
    for (auto& node : nodes_) {
        node.adjoint = Matrix{};
    }
    nodes_[loss.id()].adjoint = Matrix(1, 1, 1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        if (nodes_[id].adjoint.empty() || !nodes_[id].pullback) {
            continue;
        }
        nodes_[id].pullback(*this, id);
    }
}

void Tape::note_relu_inputs(const Matrix& x) {
    for (double v : x.data()) {
        relu_pattern_.push_back(v > 0.0);
    }
}

namespace ad {

namespace {

Tape& tape_of(Var a) {
    if (a.tape() == nullptr) {
        throw ArgumentError("autodiff: variable is not attached to a tape");
    }
    return *a.tape();
}

void same_tape(Var a, Var b) {
    if (a.tape() != b.tape()) {
        throw ArgumentError("autodiff: operands live on different tapes");
    }
}

} // namespace

Var matmul(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return t.record(subtyper::matmul(a.value(), b.value()), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint_ref(self);
        tp.accumulate(ia, matmul_bt(g, tp.value(ib)));
        tp.accumulate(ib, matmul_at(tp.value(ia), g));
    });
}

Var add(Var a, Var b) {
    same_tape(a, b);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape_of(a).record(subtyper::add(a.value(), b.value()), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix g = tp.adjoint_ref(self);
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var subtract(Var a, Var b) {
    same_tape(a, b);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape_of(a).record(subtyper::subtract(a.value(), b.value()), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix g = tp.adjoint_ref(self);
        tp.accumulate(ia, g);
        tp.accumulate(ib, subtyper::scale(g, -1.0));
    });
}

Var add_row(Var a, Var row) {
    same_tape(a, row);
    const std::size_t ia = a.id();
    const std::size_t ir = row.id();
    return tape_of(a).record(subtyper::add_row(a.value(), row.value()), [ia, ir](Tape& tp, std::size_t self) {
        const Matrix g = tp.adjoint_ref(self);
        tp.accumulate(ia, g);
        tp.accumulate(ir, column_sums(g));
    });
}

Var scale(Var a, double factor) {
    const std::size_t ia = a.id();
    return tape_of(a).record(subtyper::scale(a.value(), factor), [ia, factor](Tape& tp, std::size_t self) {
        tp.accumulate(ia, subtyper::scale(tp.adjoint_ref(self), factor));
    });
}

Var relu(Var x) {
    Tape& t = tape_of(x);
    t.note_relu_inputs(x.value());
    const std::size_t ix = x.id();
    return t.record(subtyper::relu(x.value()), [ix](Tape& tp, std::size_t self) {
        const Matrix& in = tp.value(ix);
        Matrix g = tp.adjoint_ref(self);
        for (std::size_t i = 0; i < g.size(); ++i) {
            // Subgradient at exactly 0 is taken as 0.
            if (!(in.data()[i] > 0.0)) {
                g.data()[i] = 0.0;
            }
        }
        tp.accumulate(ix, g);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    same_tape(x, gamma);
    same_tape(x, beta);
    Matrix out = subtyper::layer_norm(x.value(), gamma.value(), beta.value(), eps);

    // Cache normalized activations and per-row inverse std for the pullback.
    const Matrix& in = x.value();
    const std::size_t width = in.cols();
    Matrix xhat(in.rows(), width);
    std::vector<double> inv_std(in.rows());
    for (std::size_t i = 0; i < in.rows(); ++i) {
        auto r = in.row(i);
        double mean = 0.0;
        for (double v : r) {
            mean += v;
        }
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (double v : r) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(width);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) {
            xhat(i, j) = (r[j] - mean) * inv_std[i];
        }
    }

    const std::size_t ix = x.id();
    const std::size_t ig = gamma.id();
    const std::size_t ib = beta.id();
    return tape_of(x).record(std::move(out), [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                                 Tape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint_ref(self);
        const Matrix& gam = tp.value(ig);
        const std::size_t rows = g.rows();
        const std::size_t width = g.cols();
        Matrix dgamma(1, width);
        Matrix dbeta(1, width);
        Matrix dx(rows, width);
        std::vector<double> dxhat(width);
        for (std::size_t i = 0; i < rows; ++i) {
            double sum_dxhat = 0.0;
            double sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                dgamma(0, j) += g(i, j) * xhat(i, j);
                dbeta(0, j) += g(i, j);
                dxhat[j] = g(i, j) * gam(0, j);
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xhat(i, j);
            }
            const double w = static_cast<double>(width);
            for (std::size_t j = 0; j < width; ++j) {
                dx(i, j) = inv_std[i] / w * (w * dxhat[j] - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
            }
        }
        tp.accumulate(ix, dx);
        tp.accumulate(ig, dgamma);
        tp.accumulate(ib, dbeta);
    });
}

namespace {

// dx = y * (dy - rowsum(dy * y)) for a row-wise softmax output y.
Matrix softmax_pullback(const Matrix& y, const Matrix& dy) {
    Matrix dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
            dot += dy(i, j) * y(i, j);
        }
        for (std::size_t j = 0; j < y.cols(); ++j) {
            dx(i, j) = y(i, j) * (dy(i, j) - dot);
        }
    }
    return dx;
}

} // namespace

Var softmax_rows(Var x) {
    const std::size_t ix = x.id();
    return tape_of(x).record(subtyper::softmax_rows(x.value()), [ix](Tape& tp, std::size_t self) {
        tp.accumulate(ix, softmax_pullback(tp.value(self), tp.adjoint_ref(self)));
    });
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
    const std::size_t ix = x.id();
    const std::size_t r0 = x.rows();
    const std::size_t c0 = x.cols();
    return tape_of(x).record(x.value().reshaped(rows, cols), [ix, r0, c0](Tape& tp, std::size_t self) {
        tp.accumulate(ix, tp.adjoint_ref(self).reshaped(r0, c0));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ArgumentError("concat_cols: no inputs");
    }
    std::vector<Matrix> values;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        same_tape(parts.front(), p);
        values.push_back(p.value());
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    return tape_of(parts.front())
        .record(subtyper::concat_cols(values), [ids, widths](Tape& tp, std::size_t self) {
            const Matrix& g = tp.adjoint_ref(self);
            std::size_t offset = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                tp.accumulate(ids[p], slice_cols(g, offset, widths[p]));
                offset += widths[p];
            }
        });
}

Var sum(Var x) {
    const std::size_t ix = x.id();
    return tape_of(x).record(Matrix(1, 1, subtyper::sum(x.value())), [ix](Tape& tp, std::size_t self) {
        const Matrix& in = tp.value(ix);
        tp.accumulate(ix, Matrix(in.rows(), in.cols(), tp.adjoint_ref(self)(0, 0)));
    });
}

Var mse(Var a, Var b) {
    same_tape(a, b);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape_of(a).record(Matrix(1, 1, subtyper::mse(a.value(), b.value())), [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        if (av.empty()) {
            return;
        }
        const double factor = 2.0 * tp.adjoint_ref(self)(0, 0) / static_cast<double>(av.size());
        Matrix diff = subtyper::scale(subtyper::subtract(av, bv), factor);
        tp.accumulate(ia, diff);
        tp.accumulate(ib, subtyper::scale(diff, -1.0));
    });
}

Var block_attention(Var q, Var k, Var v, std::size_t block, double scale, Matrix* weights_out) {
    same_tape(q, k);
    same_tape(q, v);
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    if (block == 0 || qv.rows() % block != 0 || kv.rows() != qv.rows() || vv.rows() != qv.rows() ||
        kv.cols() != qv.cols()) {
        throw ShapeError("block_attention: incompatible shapes Q " + shape_of(qv) + ", K " + shape_of(kv) + ", V " +
                         shape_of(vv) + " for block " + std::to_string(block));
    }
    const std::size_t nblocks = qv.rows() / block;
    Matrix weights(qv.rows(), block);
    Matrix out(qv.rows(), vv.cols());
    Matrix logits(block, block);
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::size_t base = b * block;
        for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t j = 0; j < block; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < qv.cols(); ++c) {
                    acc += qv(base + i, c) * kv(base + j, c);
                }
                logits(i, j) = acc * scale;
            }
        }
        const Matrix probs = subtyper::softmax_rows(logits);
        for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t j = 0; j < block; ++j) {
                const double p = probs(i, j);
                weights(base + i, j) = p;
                for (std::size_t c = 0; c < vv.cols(); ++c) {
                    out(base + i, c) += p * vv(base + j, c);
                }
            }
        }
    }
    if (weights_out != nullptr) {
        *weights_out = weights;
    }

    const std::size_t iq = q.id();
    const std::size_t ik = k.id();
    const std::size_t iv = v.id();
    return tape_of(q).record(std::move(out), [iq, ik, iv, block, scale, weights = std::move(weights)](
                                                 Tape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint_ref(self);
        const Matrix& qv = tp.value(iq);
        const Matrix& kv = tp.value(ik);
        const Matrix& vv = tp.value(iv);
        Matrix dq(qv.rows(), qv.cols());
        Matrix dk(kv.rows(), kv.cols());
        Matrix dv(vv.rows(), vv.cols());
        Matrix probs(block, block);
        Matrix dprobs(block, block);
        const std::size_t nblocks = qv.rows() / block;
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::size_t base = b * block;
            for (std::size_t i = 0; i < block; ++i) {
                for (std::size_t j = 0; j < block; ++j) {
                    probs(i, j) = weights(base + i, j);
                    double acc = 0.0;
                    for (std::size_t c = 0; c < vv.cols(); ++c) {
                        acc += g(base + i, c) * vv(base + j, c);
                        dv(base + j, c) += probs(i, j) * g(base + i, c);
                    }
                    dprobs(i, j) = acc;
                }
            }
            const Matrix dlogits = softmax_pullback(probs, dprobs);
            for (std::size_t i = 0; i < block; ++i) {
                for (std::size_t j = 0; j < block; ++j) {
                    const double s = dlogits(i, j) * scale;
                    if (s == 0.0) {
                        continue;
                    }
                    for (std::size_t c = 0; c < qv.cols(); ++c) {
                        dq(base + i, c) += s * kv(base + j, c);
                        dk(base + j, c) += s * qv(base + i, c);
                    }
                }
            }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dk);
        tp.accumulate(iv, dv);
    });
}

} // namespace ad

} // namespace subtyper
