#include "wsf/nn/weights_io.hpp"

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"

namespace wsf::nn {

namespace {
constexpr std::string_view kMagic = "EFW1";
}

std::string encode_weights(std::span<const Parameter* const> params) {
  BinaryWriter w;
  w.magic(kMagic);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.u64(d);
    w.f64s(p->value.values());
  }
  return std::move(w).bytes();
}

std::vector<NamedTensor> decode_weights(std::string_view bytes) {
  BinaryReader r(bytes);
  r.expect_magic(kMagic);
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw DataError("weights: implausible rank " + std::to_string(rank) + " for '" + nt.name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_size(shape);
    if (n * sizeof(double) > r.remaining()) throw DataError("weights: truncated payload for '" + nt.name + "'");
    std::vector<double> data(n);
    r.f64s(data);
    nt.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  if (!r.at_end()) throw DataError("weights: trailing bytes after last parameter");
  return out;
}

void assign_weights(std::span<Parameter* const> params, const std::vector<NamedTensor>& tensors) {
  if (params.size() != tensors.size()) {
    throw DataError("weights: file has " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != tensors[i].name) {
      throw DataError("weights: expected '" + params[i]->name + "', file has '" + tensors[i].name + "'");
    }
    if (params[i]->value.shape() != tensors[i].value.shape()) {
      throw ShapeError("weights: '" + tensors[i].name + "' has shape " + shape_str(tensors[i].value.shape()) +
                       ", model expects " + shape_str(params[i]->value.shape()));
    }
    params[i]->value = tensors[i].value;
  }
}

}  // namespace wsf::nn
