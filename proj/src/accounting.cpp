#include "karat/accounting.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "karat/error.hpp"

namespace karat::accounting {

namespace {

double basis_terms(const basis::BasisSpec& spec) {
  if (spec.kind == basis::Kind::Fourier) return static_cast<double>(spec.grid_size);
  return static_cast<double>(spec.params_per_unit());
}

// Unit evaluations (E) and projector multiply-adds (M) per head per layer.
std::pair<double, double> operator_work(const attention::KArAtConfig& k, double n) {
  const double r = k.rank;
  switch (k.layout) {
    case attention::Layout::FullRank: return {n * n * n, 0.0};
    case attention::Layout::PhiThenW: return {n * n * r, n * n * r};
    case attention::Layout::WThenPhi: return {n * n * r, n * n * r};
    case attention::Layout::PhiPhi: return {2.0 * n * n * r, 0.0};
  }
  return {0.0, 0.0};
}

std::string millions(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(double value, double reference) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * (value - reference) / reference);
  return buf;
}

}  // namespace

Accounting count_params_flops(const vit::ViTConfig& cfg) {
  cfg.validate();
  Accounting a;
  const std::size_t d = cfg.embed_dim, m = cfg.mlp_ratio, n = cfg.tokens(), l = cfg.depth;
  const std::size_t patch_len = cfg.patch_size * cfg.patch_size * cfg.channels;
  a.tokens = n;
  a.patch_embedding = patch_len * d + d;
  a.class_token = d;
  a.positional = n * d;
  a.per_block = (4 + 2 * m) * d * d + (9 + m) * d;
  a.blocks = l * a.per_block;
  a.final_norm = 2 * d;
  a.head = d * cfg.classes + cfg.classes;
  a.backbone = a.patch_embedding + a.class_token + a.positional + a.blocks + a.final_norm + a.head;

  const std::size_t karat_heads = cfg.use_karat ? cfg.karat.karat_heads(cfg.heads) : 0;
  const std::size_t softmax_heads = cfg.heads - karat_heads;
  if (karat_heads > 0) {
    const std::size_t operators = karat_heads * (cfg.karat.sharing == attention::Sharing::Blockwise ? l : 1);
    const std::size_t per_op = attention::operator_param_count(cfg.karat, n);
    const auto r = static_cast<std::size_t>(cfg.karat.rank);
    const std::size_t projector =
        (cfg.karat.layout == attention::Layout::PhiThenW || cfg.karat.layout == attention::Layout::WThenPhi) ? n * r : 0;
    a.projector_params = operators * projector;
    a.unit_params = operators * (per_op - projector);
    a.activation_params = a.unit_params + a.projector_params;
  }
  a.total = a.backbone + a.activation_params;

  const double nn = static_cast<double>(n), dd = static_cast<double>(d), ll = static_cast<double>(l);
  const double softmax_flops = 3.0 * nn * nn * static_cast<double>(softmax_heads) * ll;
  double karat_flops = 0.0, karat_reference = 0.0;
  if (karat_heads > 0) {
    const auto [evals, macs] = operator_work(cfg.karat, nn);
    const double t = basis_terms(cfg.karat.basis);
    const double scale = static_cast<double>(karat_heads) * ll;
    karat_flops = (2.0 * macs + kTermCost * t * evals) * scale;
    karat_reference = (macs + 3.0 * t * evals) * scale;
  }
  a.activation_gflops = (softmax_flops + karat_flops) * 1e-9;
  a.activation_gflops_reference = (softmax_flops + karat_reference) * 1e-9;

  const double per_block_macs = static_cast<double>(4 + 2 * m) * nn * dd * dd + 2.0 * nn * nn * dd;
  a.backbone_gmacs = ((nn - 1.0) * static_cast<double>(patch_len) * dd + ll * per_block_macs +
                      dd * static_cast<double>(cfg.classes)) * 1e-9;
  return a;
}

vit::ViTConfig with_attention(vit::ViTConfig cfg, const std::string& tag, int rank) {
  if (tag == "none" || tag == "softmax") {
    cfg.use_karat = false;
    return cfg;
  }
  const bool ok = tag.size() >= 3 && tag[0] == 'g' && (tag.back() == 'b' || tag.back() == 'u');
  std::size_t grid = 0;
  if (ok) {
    try {
      std::size_t used = 0;
      grid = std::stoul(tag.substr(1, tag.size() - 2), &used);
      if (used != tag.size() - 2) grid = 0;
    } catch (const std::exception&) {
      grid = 0;
    }
  }
  if (grid == 0) throw ConfigError("unknown attention tag '" + tag + "' (none|softmax|g<G>b|g<G>u)");
  cfg.use_karat = true;
  cfg.karat = attention::KArAtConfig{};
  cfg.karat.basis.kind = basis::Kind::Fourier;
  cfg.karat.basis.grid_size = static_cast<int>(grid);
  cfg.karat.rank = rank;
  cfg.karat.layout = attention::Layout::PhiThenW;
  cfg.karat.sharing = tag.back() == 'b' ? attention::Sharing::Blockwise : attention::Sharing::Universal;
  return cfg;
}

std::optional<ReferenceFigures> reference_figures(const std::string& preset, const std::string& tag) {
  static const std::map<std::pair<std::string, std::string>, ReferenceFigures> table = {
      {{"vit-base", "none"}, {0.0, 85.81e6, 0.016, 17.595, 7.44}},
      {{"vit-base", "g1b"}, {1.70e6, 87.51e6, 0.268, 17.847, 17.36}},
      {{"vit-base", "g1u"}, {0.14e6, 85.95e6, 0.268, 17.847, 16.97}},
      {{"vit-small", "none"}, {0.0, 22.05e6, 0.008, 4.614, 4.15}},
      {{"vit-small", "g3b"}, {1.53e6, 23.58e6, 0.335, 4.941, 11.73}},
      {{"vit-small", "g3u"}, {0.13e6, 22.18e6, 0.335, 4.941, 11.21}},
      {{"vit-tiny", "none"}, {0.0, 5.53e6, 0.005, 1.262, 2.94}},
      {{"vit-tiny", "g3b"}, {0.76e6, 6.29e6, 0.168, 1.425, 7.48}},
      {{"vit-tiny", "g3u"}, {0.06e6, 5.59e6, 0.168, 1.425, 7.29}},
  };
  const std::string key_tag = tag == "softmax" ? "none" : tag;
  const auto it = table.find({preset, key_tag});
  if (it == table.end()) return std::nullopt;
  return it->second;
}

bool discrepant(double value, double reference, double tolerance) {
  if (reference == 0.0) return value != 0.0;
  return std::abs(value - reference) / std::abs(reference) > tolerance;
}

std::string format_report(const Accounting& a, const vit::ViTConfig& cfg, const std::string& label,
                          const std::optional<ReferenceFigures>& ref) {
  std::ostringstream out;
  out << "model " << label << ": N=" << a.tokens << " d=" << cfg.embed_dim << " h=" << cfg.heads
      << " L=" << cfg.depth << " classes=" << cfg.classes << '\n';
  if (cfg.use_karat) {
    out << "attention " << basis::to_string(cfg.karat.basis.kind) << " G=" << cfg.karat.basis.grid_size
        << " r=" << cfg.karat.rank << " layout=" << attention::to_string(cfg.karat.layout)
        << " sharing=" << attention::to_string(cfg.karat.sharing) << " karat_heads="
        << cfg.karat.karat_heads(cfg.heads) << '\n';
  } else {
    out << "attention softmax\n";
  }
  out << "  patch_embedding      " << a.patch_embedding << '\n'
      << "  class_token          " << a.class_token << '\n'
      << "  positional           " << a.positional << '\n'
      << "  blocks               " << a.blocks << " (" << a.per_block << " per block)\n"
      << "  final_norm           " << a.final_norm << '\n'
      << "  head                 " << a.head << '\n'
      << "backbone_params        " << a.backbone << " (" << millions(static_cast<double>(a.backbone)) << ")\n"
      << "activation_params      " << a.activation_params << " (units " << a.unit_params << ", projector "
      << a.projector_params << ")\n"
      << "total_params           " << a.total << " (" << millions(static_cast<double>(a.total)) << ")\n"
      << "activation_gflops      " << fixed(a.activation_gflops, 3) << '\n'
      << "activation_gflops_ref  " << fixed(a.activation_gflops_reference, 3)
      << " ((3T+1) N^2 r h L convention)\n"
      << "backbone_gmacs         " << fixed(a.backbone_gmacs, 3) << '\n';
  if (!ref) return out.str();

  out << "reference activation_params " << millions(ref->activation_params) << ", total_params "
      << millions(ref->total_params) << ", activation_gflops " << fixed(ref->activation_gflops, 3)
      << ", total_gflops " << fixed(ref->total_gflops, 3) << ", memory " << fixed(ref->memory_gb, 2) << " GB\n";
  const double backbone_ref = ref->total_params - ref->activation_params;
  auto flag = [&](const char* what, double value, double reference) {
    if (!discrepant(value, reference)) return;
    out << "FLAG " << what << ": computed " << (reference >= 1e3 ? millions(value) : fixed(value, 3))
        << " vs reference " << (reference >= 1e3 ? millions(reference) : fixed(reference, 3));
    if (reference != 0.0) out << " (" << percent(value, reference) << ")";
    out << '\n';
  };
  flag("backbone_params", static_cast<double>(a.backbone), backbone_ref);
  flag("activation_params", static_cast<double>(a.activation_params), ref->activation_params);
  flag("total_params", static_cast<double>(a.total), ref->total_params);
  flag("activation_gflops_ref", a.activation_gflops_reference, ref->activation_gflops);
  return out.str();
}

}  // namespace karat::accounting
