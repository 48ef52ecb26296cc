#include <memory>

#include "shapectl/adapter.hpp"
#include "shapectl/optim.hpp"
#include "shapectl/unet.hpp"

namespace shapectl::nn {

namespace {

Tensor random_tensor(std::vector<int> shape, DType dt, RngStream& rng,
                     double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, scale * rng.normal());
  return t;
}

}  // namespace

std::vector<NamedFragment> standard_fragments(DType dt, std::uint64_t seed) {
  std::vector<NamedFragment> frags;
  RngStream rng(seed);

  {  // linear layer
    auto lin = std::make_shared<Linear>(6, 4, dt, rng);
    auto x = std::make_shared<Tensor>(random_tensor({3, 6}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({3, 4}, dt, rng));
    NamedFragment f;
    f.name = "linear";
    lin->collect("linear", f.params);
    f.forward = [lin, x, target] { return mse_loss(lin->forward(*x), *target); };
    frags.push_back(std::move(f));
  }
  {  // conv2d 3x3
    auto conv = std::make_shared<Conv2d>(2, 3, 3, 1, 1, dt, rng);
    auto x = std::make_shared<Tensor>(random_tensor({2, 2, 5, 5}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 3, 5, 5}, dt, rng));
    NamedFragment f;
    f.name = "conv2d";
    conv->collect("conv", f.params);
    f.forward = [conv, x, target] {
      return mse_loss(conv->forward(*x), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // conv + silu + conv stack (strided)
    auto c1 = std::make_shared<Conv2d>(1, 4, 3, 1, 1, dt, rng);
    auto c2 = std::make_shared<Conv2d>(4, 2, 3, 2, 1, dt, rng);
    auto x = std::make_shared<Tensor>(random_tensor({2, 1, 6, 6}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 2, 3, 3}, dt, rng));
    NamedFragment f;
    f.name = "conv_silu_stack";
    c1->collect("c1", f.params);
    c2->collect("c2", f.params);
    f.forward = [c1, c2, x, target] {
      return mse_loss(c2->forward(silu(c1->forward(*x))), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // zero conv at init, gradients via downstream use
    auto z = std::make_shared<ZeroConv1x1>(3, 3, dt);
    auto base = std::make_shared<Tensor>(random_tensor({2, 3, 4, 4}, dt, rng));
    auto x = std::make_shared<Tensor>(random_tensor({2, 3, 4, 4}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 3, 4, 4}, dt, rng));
    NamedFragment f;
    f.name = "zero_conv_init";
    z->collect("zconv", f.params);
    f.forward = [z, base, x, target] {
      return mse_loss(silu(add(*base, z->forward(*x))), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // group norm
    auto gn = std::make_shared<GroupNorm>(4, 2, dt);
    auto x = std::make_shared<Tensor>(random_tensor({2, 4, 3, 3}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 4, 3, 3}, dt, rng));
    NamedFragment f;
    f.name = "group_norm";
    gn->collect("gn", f.params);
    f.forward = [gn, x, target] { return mse_loss(gn->forward(*x), *target); };
    frags.push_back(std::move(f));
  }
  {  // batch norm (training mode, 2d)
    auto bn = std::make_shared<BatchNorm>(3, dt);
    auto x = std::make_shared<Tensor>(random_tensor({4, 3, 3, 3}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({4, 3, 3, 3}, dt, rng));
    NamedFragment f;
    f.name = "batch_norm";
    // running stats shift every forward; keep them out of the FD probes by
    // resetting inside the closure
    auto rm = std::make_shared<Tensor>(bn->running_mean);
    auto rv = std::make_shared<Tensor>(bn->running_var);
    bn->collect("bn", f.params);
    f.params.erase(
        std::remove_if(f.params.begin(), f.params.end(),
                       [](const ParamRef& p) { return p.is_buffer; }),
        f.params.end());
    f.forward = [bn, x, target] {
      for (std::int64_t i = 0; i < bn->running_mean.numel(); ++i) {
        bn->running_mean.set(i, 0.0);
        bn->running_var.set(i, 1.0);
      }
      return mse_loss(bn->forward(*x, /*training=*/true), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // embedding via label-weight matmul
    auto emb = std::make_shared<Embedding>(5, 6, dt, rng);
    auto w = std::make_shared<Tensor>(random_tensor({3, 5}, dt, rng, 0.5));
    auto target = std::make_shared<Tensor>(random_tensor({3, 6}, dt, rng));
    NamedFragment f;
    f.name = "embedding_matmul";
    emb->collect("emb", f.params);
    f.forward = [emb, w, target] {
      return mse_loss(matmul(*w, emb->table), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // hypernetwork-modulated zero conv (Eq. 6 path)
    RngStream hr = rng.derive(11);
    auto z = std::make_shared<ZeroConv1x1>(3, 4, dt);
    // give the zero conv nonzero weights so modulation gradients are live
    for (std::int64_t i = 0; i < z->w.numel(); ++i) z->w.set(i, 0.3 * hr.normal());
    auto h = std::make_shared<adapter::HyperMlp>(8, 6, 4, dt, hr);
    for (std::int64_t i = 0; i < h->l2.w.numel(); ++i) h->l2.w.set(i, 0.2 * hr.normal());
    auto x = std::make_shared<Tensor>(random_tensor({2, 3, 3, 3}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 4, 3, 3}, dt, rng));
    NamedFragment f;
    f.name = "modulated_zero_conv";
    z->collect("z", f.params);
    h->collect("h", f.params);
    f.forward = [z, h, x, target] {
      Tensor femb = fourier_embed_batch({0.3, 0.8}, 4, x->dtype());
      Tensor scale = add_const(h->forward(femb), 1.0);
      return mse_loss(z->forward_modulated(*x, scale), *target);
    };
    frags.push_back(std::move(f));
  }
  {  // full toy UNet (small instantiation of the same architecture)
    UNetConfig cfg;
    cfg.in_ch = 1;
    cfg.c1 = 4;
    cfg.c2 = 8;
    cfg.c3 = 8;
    cfg.emb_dim = 8;
    cfg.groups = 2;
    cfg.num_classes = 3;
    cfg.canvas = 8;
    RngStream ur = rng.derive(7);
    auto unet = std::make_shared<UNet>(cfg, dt, ur);
    // zero-init output conv would zero most gradients; give it signal
    for (std::int64_t i = 0; i < unet->out_conv.w.numel(); ++i)
      unet->out_conv.w.set(i, 0.2 * ur.normal());
    auto x = std::make_shared<Tensor>(random_tensor({2, 1, 8, 8}, dt, rng));
    auto target = std::make_shared<Tensor>(random_tensor({2, 1, 8, 8}, dt, rng));
    auto lw = std::make_shared<Tensor>(
        make_label_weights({{0}, {1, 2}}, {false, false}, cfg.num_classes, dt));
    NamedFragment f;
    f.name = "toy_unet_full";
    unet->collect("unet", f.params);
    f.forward = [unet, x, target, lw] {
      Tensor emb = unet->embed({3, 150}, *lw);
      return mse_loss(unet->forward(*x, emb), *target);
    };
    f.fd_step = 2e-4;
    frags.push_back(std::move(f));
  }
  return frags;
}

}  // namespace shapectl::nn
