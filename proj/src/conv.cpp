#include "convcaps/conv.hpp"

namespace convcaps {

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
    if (input.rank() != 4) throw usage_error("conv3d: input must be [X,Y,Z,Cin]");
    if (weight.rank() != 5) throw usage_error("conv3d: weight must be [k,k,k,Cin,Cout]");
    const int k = spec.kernel;
    if (weight.dim(0) != k || weight.dim(1) != k || weight.dim(2) != k)
        throw usage_error("conv3d: weight kernel extents do not match spec");
    if (weight.dim(3) != input.dim(3))
        throw usage_error("conv3d: weight Cin " + std::to_string(weight.dim(3)) +
                          " != input channels " + std::to_string(input.dim(3)));
    const i64 Cout = weight.dim(4);
    if (bias.rank() != 1 || bias.dim(0) != Cout)
        throw usage_error("conv3d: bias must be [Cout]");

    const kernels::ConvGeom g = kernels::make_conv_geom(
        input.dim(0), input.dim(1), input.dim(2), input.dim(3), Cout, k, spec.stride[0],
        spec.stride[1], spec.stride[2], spec.dilation[0], spec.dilation[1], spec.dilation[2]);

    Tensor<T> out(Shape{g.Xo, g.Yo, g.Zo, g.Cout});
    kernels::conv3d_forward(g, input.data(), weight.data(), bias.data(), out.data());
    check_finite("conv3d", out);

    if (tape_active<T>() &&
        (input.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
        const_cast<Tensor<T>&>(out).set_requires_grad(true);
        for (const Tensor<T>* t : {&input, &weight, &bias})
            if (t->requires_grad()) t->impl()->ensure_grad();
        auto ii = input.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl();
        tape_record<T>("conv3d", [ii, wi, bi, oi, g] {
            const T* dout = oi->grad.data();
            if (ii->requires_grad)
                kernels::conv3d_backward_input(g, wi->data.data(), dout, ii->grad.data());
            if (wi->requires_grad)
                kernels::conv3d_backward_weight(g, ii->data.data(), dout, wi->grad.data());
            if (bi->requires_grad) kernels::conv3d_backward_bias(g, dout, bi->grad.data());
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample3d(const Tensor<T>& input, int factor) {
    if (factor != 2) throw usage_error("upsample3d: only factor 2 is supported");
    if (input.rank() != 4) throw usage_error("upsample3d: input must be [X,Y,Z,C]");
    const i64 X = input.dim(0), Y = input.dim(1), Z = input.dim(2), C = input.dim(3);
    Tensor<T> out(Shape{2 * X, 2 * Y, 2 * Z, C});
    kernels::upsample2x_forward(X, Y, Z, C, input.data(), out.data());
    check_finite("upsample3d", out);

    if (tape_active<T>() && input.requires_grad()) {
        const_cast<Tensor<T>&>(out).set_requires_grad(true);
        input.impl()->ensure_grad();
        auto ii = input.impl(), oi = out.impl();
        tape_record<T>("upsample3d", [ii, oi, X, Y, Z, C] {
            kernels::upsample2x_backward(X, Y, Z, C, oi->grad.data(), ii->grad.data());
        });
    }
    return out;
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              const ConvSpec&);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, const ConvSpec&);
template Tensor<float> upsample3d(const Tensor<float>&, int);
template Tensor<double> upsample3d(const Tensor<double>&, int);

}  // namespace convcaps
