#include "spar/dataset_io.hpp"

#include "spar/binary_io.hpp"
#include "spar/errors.hpp"

namespace spar {

std::string encode_dataset(const Dataset& data) {
  io::Writer w;
  w.bytes("SPDS");
  w.u32(kDatasetVersion);
  w.u64(data.samples.size());
  w.u64(data.modality_count());
  w.u64(data.spatial_dim);
  w.u64(data.classes);
  w.u64(data.layout_pool);
  for (std::size_t k = 0; k < data.modality_count(); ++k) {
    w.u64(data.nodes[k]);
    w.u64(data.tokens[k]);
    w.u64(data.token_dims[k]);
  }
  for (const auto& s : data.samples) {
    w.u64(s.seed);
    w.u64(s.scene);
    w.u64(s.cls);
    for (double v : s.source_position) w.f64(v);
    for (std::size_t k = 0; k < data.modality_count(); ++k) {
      for (auto id : s.node_ids[k]) w.u64(id);
      for (double v : s.layouts[k].data()) w.f64(v);
      for (auto f : s.grids[k].missing) w.u64(f);
      for (double v : s.grids[k].values.data()) w.f64(v);
      for (double v : s.node_energy[k]) w.f64(v);
    }
  }
  return w.data();
}

Dataset decode_dataset(const std::string& bytes) {
  io::Reader r(bytes);
  if (r.bytes(4, "magic") != "SPDS") throw FormatError("not a dataset file (bad magic)", 0);
  const std::uint32_t version = r.u32("format version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), 4);
  Dataset d;
  const std::uint64_t count = r.u64("sample count");
  const std::uint64_t modalities = r.u64("modality count");
  d.spatial_dim = r.u64("spatial dim");
  d.classes = r.u64("class count");
  d.layout_pool = r.u64("layout pool");
  if (modalities == 0 || modalities > 64) throw FormatError("implausible modality count", r.offset());
  if (d.spatial_dim == 0 || d.spatial_dim > 3) throw FormatError("implausible spatial dim", r.offset());
  for (std::uint64_t k = 0; k < modalities; ++k) {
    d.nodes.push_back(r.u64("modality nodes"));
    d.tokens.push_back(r.u64("modality tokens"));
    d.token_dims.push_back(r.u64("modality token dim"));
    if (d.nodes.back() == 0 || d.tokens.back() == 0 || d.token_dims.back() == 0)
      throw FormatError("zero extent in modality header", r.offset());
  }
  // Every sample takes at least this many bytes; guards the reserve below.
  if (count > r.remaining() / 24) throw FormatError("sample count exceeds file size", r.offset());
  d.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "sample " + std::to_string(i);
    SyntheticSample s;
    s.seed = r.u64(where + " seed");
    s.scene = r.u64(where + " scene");
    s.cls = r.u64(where + " class");
    for (std::size_t j = 0; j < d.spatial_dim; ++j) s.source_position.push_back(r.f64(where + " source"));
    for (std::size_t k = 0; k < modalities; ++k) {
      const std::size_t n = d.nodes[k], m = d.tokens[k], dx = d.token_dims[k];
      std::vector<std::uint64_t> ids(n);
      for (auto& id : ids) id = r.u64(where + " node ids");
      Tensor layout({n, d.spatial_dim});
      for (double& v : layout.data()) v = r.f64(where + " layout");
      TokenGrid grid(n, m, dx);
      for (auto& f : grid.missing) {
        const std::uint64_t flag = r.u64(where + " missing flags");
        if (flag > 1) throw FormatError("missing flag must be 0 or 1", r.offset() - 8);
        f = static_cast<std::uint8_t>(flag);
      }
      const std::size_t values_at = r.offset();
      for (double& v : grid.values.data()) v = r.f64(where + " token values");
      if (!grid.padding_is_zero()) throw FormatError(where + ": missing token carries a nonzero value", values_at);
      std::vector<double> energy(n);
      for (double& v : energy) v = r.f64(where + " node energy");
      s.node_ids.push_back(std::move(ids));
      s.layouts.push_back(std::move(layout));
      s.grids.push_back(std::move(grid));
      s.node_energy.push_back(std::move(energy));
    }
    d.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last sample", r.offset());
  return d;
}

void save_dataset(const Dataset& data, const std::string& path) { io::write_file_atomic(path, encode_dataset(data)); }

Dataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace spar
