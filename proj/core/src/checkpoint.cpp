#include "pfvg/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "pfvg/errors.hpp"

namespace pfvg {

namespace {

constexpr char kMagic[5] = "PFVG";
constexpr std::uint32_t kMaxRank = 8;

void put_kv(std::ostream& os, const std::map<std::string, std::string>& kv) {
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    binary::put_string(os, k);
    binary::put_string(os, v);
  }
}

std::map<std::string, std::string> get_kv(std::istream& is) {
  std::map<std::string, std::string> kv;
  const auto n = binary::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = binary::get_string(is);
    kv[std::move(k)] = binary::get_string(is);
  }
  return kv;
}

void put_dims(std::ostream& os, const Shape& dims) {
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) {
    binary::put<std::uint64_t>(os, d);
  }
}

Shape get_dims(std::istream& is) {
  const auto rank = binary::get<std::uint32_t>(is);
  if (rank == 0 || rank > kMaxRank) {
    throw FormatError("checkpoint: bad tensor rank " + std::to_string(rank));
  }
  Shape dims(rank);
  std::uint64_t total = 1;
  for (auto& d : dims) {
    const auto v = binary::get<std::uint64_t>(is);
    if (v == 0 || v > (1ull << 32)) {
      throw FormatError("checkpoint: bad tensor dimension " + std::to_string(v));
    }
    d = static_cast<std::size_t>(v);
    total *= v;
    if (total > (1ull << 32)) {
      throw FormatError("checkpoint: tensor too large");
    }
  }
  return dims;
}

void put_values(std::ostream& os, std::span<const double> values) {
  for (double v : values) {
    binary::put<double>(os, v);
  }
}

std::vector<double> get_values(std::istream& is, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) {
    v = binary::get<double>(is);
  }
  return out;
}

} // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  binary::put_magic(os, kMagic);
  binary::put<std::uint32_t>(os, kCheckpointVersion);
  binary::put_string(os, ckpt.stage_tag);
  put_kv(os, ckpt.config);

  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    binary::put_string(os, name);
    put_dims(os, t.dims());
    put_values(os, t.data());
  }

  binary::put<std::uint64_t>(os, ckpt.optimizer_step);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.moments.size()));
  for (const auto& [name, mo] : ckpt.moments) {
    binary::put_string(os, name);
    put_dims(os, mo.dims);
    put_values(os, mo.m);
    put_values(os, mo.v);
  }

  binary::put_string(os, ckpt.rng_state);
  put_kv(os, ckpt.progress);
  if (!os) {
    throw FormatError("checkpoint: write failed");
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  if (!binary::check_magic(is, kMagic)) {
    throw VersionError("not a checkpoint (bad magic)");
  }
  const auto version = binary::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) +
                       " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.stage_tag = binary::get_string(is);
  ckpt.config = get_kv(is);

  const auto n_tensors = binary::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = binary::get_string(is);
    Shape dims = get_dims(is);
    auto values = get_values(is, shape_numel(dims));
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(dims), std::move(values)));
  }

  ckpt.optimizer_step = binary::get<std::uint64_t>(is);
  const auto n_moments = binary::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    auto name = binary::get_string(is);
    Moments mo;
    mo.dims = get_dims(is);
    mo.m = get_values(is, shape_numel(mo.dims));
    mo.v = get_values(is, shape_numel(mo.dims));
    ckpt.moments.emplace(std::move(name), std::move(mo));
  }

  ckpt.rng_state = binary::get_string(is);
  ckpt.progress = get_kv(is);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw FormatError("cannot open checkpoint " + path.string());
  }
  return read_checkpoint(is);
}

Checkpoint capture_checkpoint(const FlowTransformer& model, const std::string& stage_tag,
                              const AdamW* optimizer, const std::mt19937_64* rng,
                              std::map<std::string, std::string> progress) {
  Checkpoint ckpt;
  ckpt.stage_tag = stage_tag;
  ckpt.config = model.config().to_map();
  for (const auto& [name, t] : model.parameters()) {
    ckpt.tensors.emplace_back(name, t.clone(false));
  }
  if (optimizer) {
    ckpt.optimizer_step = optimizer->step();
    ckpt.moments = optimizer->moments();
  }
  if (rng) {
    ckpt.rng_state = rng_to_string(*rng);
  }
  ckpt.progress = std::move(progress);
  return ckpt;
}

void restore_parameters(FlowTransformer& model, const Checkpoint& ckpt) {
  auto& store = model.parameters();
  if (store.size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model has " + std::to_string(store.size()));
  }
  std::size_t i = 0;
  for (auto& [name, t] : store) {
    const auto& [cname, ct] = ckpt.tensors[i++];
    if (name != cname || t.dims() != ct.dims()) {
      throw FormatError("checkpoint tensor " + cname + " " + shape_string(ct.dims()) +
                        " does not match model parameter " + name + " " +
                        shape_string(t.dims()));
    }
    auto dst = t.mutable_data();
    std::copy(ct.data().begin(), ct.data().end(), dst.begin());
  }
}

std::unique_ptr<FlowTransformer> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<FlowTransformer>(ModelConfig::from_map(ckpt.config), 0);
  restore_parameters(*model, ckpt);
  return model;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) {
    throw FormatError("checkpoint: malformed rng state");
  }
  return rng;
}

} // namespace pfvg
