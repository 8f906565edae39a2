#ifndef SCDD_CHECKPOINT_HPP
#define SCDD_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

/**
 * @file checkpoint.hpp
 * @brief Flat binary tensor checkpoints.
 *
 * Layout: the 8 bytes `LDTL0001`, then one record per tensor until end of file:
 * name length (u64), name bytes, rank (u64), rank dims (u64 each), values (f64 each).
 * Every integer and float is little-endian.
 */

namespace scdd {

using NamedTensor = std::pair<std::string, Tensor>;

inline constexpr char checkpoint_magic[9] = "LDTL0001";

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);

void save_checkpoint(const std::string& path, const ParamSet& params);

/** Records in file order. Throws `ParseError` on a bad magic or truncated record. */
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/** Every record of a checkpoint as a parameter set (unfrozen). */
ParamSet load_params(const std::string& path);

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

}

#endif
