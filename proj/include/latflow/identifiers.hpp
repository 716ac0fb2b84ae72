#pragma once

#include <cstdint>
#include <vector>

#include "latflow/autodiff.hpp"
#include "latflow/rng.hpp"

namespace latflow::ids {

/// Pool of reusable entity identifiers {0 .. size-1}.
struct IdentifierPool {
    std::int64_t size = 0;
};

/// Number of injective assignments of n entities into a pool of u ids:
/// the falling factorial u * (u-1) * ... * (u-n+1); 0 when n > u, 1 when
/// n == 0. Throws NumericError if the count exceeds 64 bits.
std::uint64_t count_assignments(std::int64_t n, std::int64_t u);

/// Draws ids for n entities, distinct, uniform over all injective
/// assignments. Throws PoolError when n exceeds the pool size.
std::vector<std::int64_t> sample_assignment(std::int64_t n, const IdentifierPool& pool, Rng& rng);

/// Injectivity and range check; throws PoolError on violation.
void validate_assignment(const std::vector<std::int64_t>& ids, std::int64_t pool_size);

/// Looks up embedding rows for an assignment: table [u, D_u] -> U [n, D_u].
/// The assignment is validated first, so duplicates are rejected here even
/// though the gather itself would tolerate them.
ad::Value embed_assignment(const ad::Value& table, const std::vector<std::int64_t>& ids);

} // namespace latflow::ids
