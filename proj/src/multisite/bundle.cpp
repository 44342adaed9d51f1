#include "wsf/multisite/bundle.hpp"

#include "wsf/common/binary_io.hpp"
#include "wsf/common/error.hpp"

namespace wsf::multisite {

std::string to_string(BundleSplit split) {
  switch (split) {
    case BundleSplit::Train: return "train";
    case BundleSplit::Val: return "val";
    case BundleSplit::Test: return "test";
  }
  return "?";
}

BundleSplit bundle_split_from_string(const std::string& s) {
  if (s == "train") return BundleSplit::Train;
  if (s == "val") return BundleSplit::Val;
  if (s == "test") return BundleSplit::Test;
  throw DataError("unknown bundle split '" + s + "'");
}

void FeatureBundle::validate() const {
  const std::size_t r = rows();
  if (r != examples * n_aug) throw DataError("bundle " + site_id + ": rows != examples * n_aug");
  if (aug_index.size() != r || patients.size() != r) throw DataError("bundle " + site_id + ": ragged row metadata");
  if (features.size() != r * roster.size() * feature_size) throw DataError("bundle " + site_id + ": feature block size");
  if (nmd.size() != r * roster.size() * nmd_size) throw DataError("bundle " + site_id + ": nmd block size");
}

std::string encode_bundle(const FeatureBundle& b) {
  b.validate();
  BinaryWriter w;
  w.magic("EFB1");
  w.str(b.site_id);
  w.str(to_string(b.split));
  w.u32(static_cast<std::uint32_t>(b.roster.size()));
  for (const auto& id : b.roster) w.str(id);
  w.u64(b.feature_size);
  w.u64(b.nmd_size);
  w.u64(b.n_aug);
  w.u64(b.examples);
  w.u64(b.rows());
  const std::size_t d = b.roster.size();
  for (std::size_t r = 0; r < b.rows(); ++r) {
    w.f64(b.labels[r]);
    w.f64(b.aug_index[r]);
    w.f64(b.patients[r]);
    w.f64s({b.features.data() + r * d * b.feature_size, d * b.feature_size});
    w.f64s({b.nmd.data() + r * d * b.nmd_size, d * b.nmd_size});
  }
  return std::move(w).bytes();
}

FeatureBundle decode_bundle(std::string_view bytes) {
  BinaryReader r(bytes);
  r.expect_magic("EFB1");
  FeatureBundle b;
  b.site_id = r.str();
  b.split = bundle_split_from_string(r.str());
  const auto nr = r.u32();
  for (std::uint32_t i = 0; i < nr; ++i) b.roster.push_back(r.str());
  b.feature_size = r.u64();
  b.nmd_size = r.u64();
  b.n_aug = r.u64();
  b.examples = r.u64();
  const auto rows = r.u64();
  const std::size_t d = b.roster.size();
  const std::size_t stride = 3 + d * (b.feature_size + b.nmd_size);
  if (rows * stride * sizeof(double) != r.remaining()) throw DataError("bundle: payload size does not match header");
  b.features.resize(rows * d * b.feature_size);
  b.nmd.resize(rows * d * b.nmd_size);
  for (std::uint64_t i = 0; i < rows; ++i) {
    b.labels.push_back(static_cast<int>(r.f64()));
    b.aug_index.push_back(static_cast<int>(r.f64()));
    b.patients.push_back(static_cast<int>(r.f64()));
    r.f64s({b.features.data() + i * d * b.feature_size, d * b.feature_size});
    r.f64s({b.nmd.data() + i * d * b.nmd_size, d * b.nmd_size});
  }
  b.validate();
  return b;
}

}  // namespace wsf::multisite
