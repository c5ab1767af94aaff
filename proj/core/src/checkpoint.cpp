#include "spar/checkpoint.hpp"

#include <set>

#include "spar/binary_io.hpp"
#include "spar/errors.hpp"

namespace spar {

std::string encode_checkpoint(const ParameterStore& store) {
  io::Writer w;
  w.bytes("SPAR");
  w.u32(kCheckpointVersion);
  auto params = store.all();
  w.u64(params.size());
  for (const Parameter* p : params) {
    w.u64(p->name.size());
    w.bytes(p->name);
    w.u64(p->value.rank());
    for (auto e : p->value.shape()) w.u64(e);
    for (double v : p->value.data()) w.f64(v);
  }
  return w.data();
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  io::Reader r(bytes);
  if (r.bytes(4, "magic") != "SPAR") throw FormatError("not a checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint64_t count = r.u64("entry count");
  std::vector<CheckpointEntry> out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string where = "entry " + std::to_string(e);
    const std::uint64_t name_len = r.u64(where + " name length");
    if (name_len > r.remaining()) throw FormatError("truncated file while reading " + where + " name", r.offset());
    CheckpointEntry entry;
    entry.name = r.bytes(name_len, where + " name");
    const std::string what = where + " ('" + entry.name + "')";
    const std::uint64_t rank = r.u64(what + " rank");
    if (rank == 0 || rank > 8) throw FormatError("invalid rank " + std::to_string(rank) + " in " + what, r.offset());
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::uint64_t dim = r.u64(what + " dims");
      if (dim == 0) throw FormatError("zero extent in " + what, r.offset());
      shape.push_back(dim);
      numel *= dim;
    }
    if (numel > r.remaining() / 8) throw FormatError("truncated file while reading " + what + " values", r.offset());
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64(what + " values");
    entry.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(entry));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last entry", r.offset());
  return out;
}

void save_checkpoint(const ParameterStore& store, const std::string& path) {
  io::write_file_atomic(path, encode_checkpoint(store));
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

void apply_checkpoint(const std::vector<CheckpointEntry>& entries, ParameterStore& store) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    Parameter* p = store.find(e.name);
    if (!p) throw ContractError("checkpoint entry '" + e.name + "' does not name a model parameter");
    if (p->value.shape() != e.value.shape()) {
      throw DimensionError("checkpoint entry '" + e.name + "' has shape " + shape_string(e.value.shape()) +
                           " but the configured model expects " + shape_string(p->value.shape()));
    }
    if (!seen.insert(e.name).second) throw ContractError("checkpoint repeats entry '" + e.name + "'");
  }
  for (const Parameter* p : store.all()) {
    if (!seen.count(p->name)) throw ContractError("checkpoint lacks parameter '" + p->name + "'");
  }
  for (const auto& e : entries) store.at(e.name).value = e.value;
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  apply_checkpoint(read_checkpoint(path), store);
}

}  // namespace spar
