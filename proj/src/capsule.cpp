#include "convcaps/capsule.hpp"

#include "convcaps/kernels.hpp"

namespace convcaps {

namespace {

// Taped wrapper around the squash kernel; operates on the last axis.
template <typename T>
Tensor<T> squash_op(const Tensor<T>& s) {
    if (s.rank() < 1) throw usage_error("squash needs rank >= 1");
    const i64 A = s.dim(s.rank() - 1);
    const i64 rows = s.size() / A;
    Tensor<T> out(s.shape());
    kernels::squash_forward(rows, A, s.data(), out.data());
    check_finite("squash", out);
    if (tape_active<T>() && s.requires_grad()) {
        const_cast<Tensor<T>&>(out).set_requires_grad(true);
        s.impl()->ensure_grad();
        auto si = s.impl(), oi = out.impl();
        tape_record<T>("squash", [si, oi, rows, A] {
            kernels::squash_backward(rows, A, si->data.data(), oi->grad.data(),
                                     si->grad.data());
        });
    }
    return out;
}

// Gather receptive fields of a capsule map into per-position vote inputs:
// poses [X,Y,Z,Tin,Ain] -> u [V, N, Ain] with V = X'*Y'*Z', N = k^3*Tin.
template <typename T>
Tensor<T> caps_gather(const Tensor<T>& poses, const kernels::CapsGeom& g) {
    Tensor<T> u(Shape{g.out_voxels(), g.N, g.Ain});
    kernels::caps_gather_forward(g, poses.data(), u.data());
    check_finite("caps_gather", u);
    if (tape_active<T>() && poses.requires_grad()) {
        const_cast<Tensor<T>&>(u).set_requires_grad(true);
        poses.impl()->ensure_grad();
        auto pi = poses.impl(), ui = u.impl();
        tape_record<T>("caps_gather", [pi, ui, g] {
            kernels::caps_gather_backward(g, ui->grad.data(), pi->grad.data());
        });
    }
    return u;
}

// votes[v,n,j,:] = W[n,j] . u[v,n,:], weights shared across positions.
template <typename T>
Tensor<T> vote_transform(const Tensor<T>& u, const Tensor<T>& weight,
                         const kernels::CapsGeom& g) {
    Tensor<T> votes(Shape{g.out_voxels(), g.N, g.Tout, g.Aout});
    kernels::vote_transform_forward(g, u.data(), weight.data(), votes.data());
    check_finite("vote_transform", votes);
    if (tape_active<T>() && (u.requires_grad() || weight.requires_grad())) {
        const_cast<Tensor<T>&>(votes).set_requires_grad(true);
        if (u.requires_grad()) u.impl()->ensure_grad();
        if (weight.requires_grad()) weight.impl()->ensure_grad();
        auto ui = u.impl(), wi = weight.impl(), vi = votes.impl();
        tape_record<T>("vote_transform", [ui, wi, vi, g] {
            if (ui->requires_grad)
                kernels::vote_transform_backward_u(g, wi->data.data(), vi->grad.data(),
                                                   ui->grad.data());
            if (wi->requires_grad)
                kernels::vote_transform_backward_w(g, ui->data.data(), vi->grad.data(),
                                                   wi->grad.data());
        });
    }
    return votes;
}

// s[v,j,:] = sum_n c[v,n,j] * votes[v,n,j,:]
template <typename T>
Tensor<T> contract_votes(const Tensor<T>& c, const Tensor<T>& votes) {
    const i64 V = votes.dim(0), N = votes.dim(1), J = votes.dim(2), A = votes.dim(3);
    Tensor<T> s(Shape{V, J, A});
    kernels::contract_votes_forward(V, N, J, A, c.data(), votes.data(), s.data());
    check_finite("contract_votes", s);
    if (tape_active<T>() && (c.requires_grad() || votes.requires_grad())) {
        const_cast<Tensor<T>&>(s).set_requires_grad(true);
        if (c.requires_grad()) c.impl()->ensure_grad();
        if (votes.requires_grad()) votes.impl()->ensure_grad();
        auto ci = c.impl(), ui = votes.impl(), si = s.impl();
        tape_record<T>("contract_votes", [ci, ui, si, V, N, J, A] {
            kernels::contract_votes_backward(
                V, N, J, A, ci->data.data(), ui->data.data(), si->grad.data(),
                ci->requires_grad ? ci->grad.data() : nullptr,
                ui->requires_grad ? ui->grad.data() : nullptr);
        });
    }
    return s;
}

// agreement[v,n,j] = votes[v,n,j,:] . poses[v,j,:]
template <typename T>
Tensor<T> agreement(const Tensor<T>& votes, const Tensor<T>& poses) {
    const i64 V = votes.dim(0), N = votes.dim(1), J = votes.dim(2), A = votes.dim(3);
    Tensor<T> b(Shape{V, N, J});
    kernels::agreement_forward(V, N, J, A, votes.data(), poses.data(), b.data());
    check_finite("agreement", b);
    if (tape_active<T>() && (votes.requires_grad() || poses.requires_grad())) {
        const_cast<Tensor<T>&>(b).set_requires_grad(true);
        if (votes.requires_grad()) votes.impl()->ensure_grad();
        if (poses.requires_grad()) poses.impl()->ensure_grad();
        auto ui = votes.impl(), pi = poses.impl(), bi = b.impl();
        tape_record<T>("agreement", [ui, pi, bi, V, N, J, A] {
            kernels::agreement_backward(V, N, J, A, ui->data.data(), pi->data.data(),
                                        bi->grad.data(),
                                        ui->requires_grad ? ui->grad.data() : nullptr,
                                        pi->requires_grad ? pi->grad.data() : nullptr);
        });
    }
    return b;
}

// Shared routing loop over votes [V,N,J,A]. Logits start at zero each call and
// the whole unrolled recurrence stays on the tape, so gradients flow through
// the coupling coefficients.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> route(const Tensor<T>& votes, int iterations) {
    if (iterations < 1) throw usage_error("routing iterations must be >= 1");
    const i64 V = votes.dim(0), N = votes.dim(1), J = votes.dim(2);
    Tensor<T> b(Shape{V, N, J});
    Tensor<T> c, poses;
    for (int it = 0; it < iterations; ++it) {
        c = softmax(b, -1);
        Tensor<T> s = contract_votes(c, votes);
        poses = squash_op(s);
        if (it + 1 < iterations) b = add(b, agreement(votes, poses));
    }
    return {poses, c};
}

}  // namespace

template <typename T>
Tensor<T> squash(const Tensor<T>& s) {
    return squash_op(s);
}

template <typename T>
CapsuleMap<T> primary_caps(const Tensor<T>& features, i64 types) {
    if (features.rank() != 4) throw usage_error("primary_caps: features must be [X,Y,Z,F]");
    const i64 F = features.dim(3);
    if (types < 1 || F % types != 0)
        throw usage_error("primary_caps: " + std::to_string(F) +
                          " channels not divisible into " + std::to_string(types) + " types");
    const i64 A = F / types;
    Tensor<T> poses =
        reshape(features, Shape{features.dim(0), features.dim(1), features.dim(2), types, A});
    return CapsuleMap<T>{squash_op(poses)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> dynamic_routing(const Tensor<T>& votes, int iterations) {
    if (votes.rank() != 3) throw usage_error("dynamic_routing: votes must be [N,J,A]");
    const i64 N = votes.dim(0), J = votes.dim(1), A = votes.dim(2);
    Tensor<T> batched = reshape(votes, Shape{1, N, J, A});
    auto [poses, couplings] = route(batched, iterations);
    return {reshape(poses, Shape{J, A}), reshape(couplings, Shape{N, J})};
}

template <typename T>
ConvCapsuleOut<T> conv_capsule(const CapsuleMap<T>& input, const Tensor<T>& weight,
                               const ConvSpec& spec, int iterations) {
    const Tensor<T>& poses = input.poses;
    if (poses.rank() != 5) throw usage_error("conv_capsule: input poses must be [X,Y,Z,T,A]");
    if (weight.rank() != 7)
        throw usage_error("conv_capsule: weight must be [k,k,k,Tin,Tout,Ain,Aout]");
    const int k = spec.kernel;
    if (weight.dim(0) != k || weight.dim(1) != k || weight.dim(2) != k)
        throw usage_error("conv_capsule: weight kernel extents do not match spec");
    if (weight.dim(3) != poses.dim(3) || weight.dim(5) != poses.dim(4))
        throw usage_error("conv_capsule: weight Tin/Ain do not match input capsules");

    const kernels::CapsGeom g = kernels::make_caps_geom(
        poses.dim(0), poses.dim(1), poses.dim(2), poses.dim(3), poses.dim(4), weight.dim(4),
        weight.dim(6), k, spec.stride[0], spec.stride[1], spec.stride[2], spec.dilation[0],
        spec.dilation[1], spec.dilation[2]);

    Tensor<T> u = caps_gather(poses, g);
    Tensor<T> votes = vote_transform(u, weight, g);
    auto [flat_poses, flat_couplings] = route(votes, iterations);

    CapsuleMap<T> out{reshape(flat_poses, Shape{g.Xo, g.Yo, g.Zo, g.Tout, g.Aout})};
    Tensor<T> couplings = reshape(flat_couplings, Shape{g.Xo, g.Yo, g.Zo, g.N, g.Tout});
    return ConvCapsuleOut<T>{out, couplings};
}

template <typename T>
Tensor<T> capsule_length(const CapsuleMap<T>& caps) {
    return vector_norm_last(caps.poses);
}

#define CONVCAPS_CAPSULE_INSTANTIATE(T)                                                     \
    template Tensor<T> squash(const Tensor<T>&);                                           \
    template CapsuleMap<T> primary_caps(const Tensor<T>&, i64);                            \
    template std::pair<Tensor<T>, Tensor<T>> dynamic_routing(const Tensor<T>&, int);       \
    template ConvCapsuleOut<T> conv_capsule(const CapsuleMap<T>&, const Tensor<T>&,        \
                                            const ConvSpec&, int);                         \
    template Tensor<T> capsule_length(const CapsuleMap<T>&);

CONVCAPS_CAPSULE_INSTANTIATE(float)
CONVCAPS_CAPSULE_INSTANTIATE(double)
#undef CONVCAPS_CAPSULE_INSTANTIATE

}  // namespace convcaps
