#include "latflow/identifiers.hpp"

#include <numeric>
#include <unordered_set>

#include "latflow/error.hpp"

namespace latflow::ids {

std::uint64_t count_assignments(std::int64_t n, std::int64_t u) {
    if (n < 0 || u < 0) throw RangeError("count_assignments: negative argument");
    if (n > u) return 0;
    std::uint64_t acc = 1;
    for (std::int64_t k = 0; k < n; ++k) {
        const auto f = static_cast<std::uint64_t>(u - k);
        if (f != 0 && acc > ~std::uint64_t{0} / f)
            throw NumericError("count_assignments: falling factorial exceeds 64 bits");
        acc *= f;
    }
    return acc;
}

std::vector<std::int64_t> sample_assignment(std::int64_t n, const IdentifierPool& pool, Rng& rng) {
    if (pool.size < 1) throw RangeError("identifier pool must have positive size");
    if (n < 0) throw RangeError("entity count must be nonnegative");
    if (n > pool.size)
        throw PoolError("cannot assign " + std::to_string(n) + " distinct ids from a pool of " +
                        std::to_string(pool.size) +
                        "; injective assignments exist only when N <= pool size");
    // Partial Fisher-Yates: prefix of a uniform permutation, so the result
    // is uniform over injective assignments.
    std::vector<std::int64_t> ids(static_cast<std::size_t>(pool.size));
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(pool.size - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(n));
    return ids;
}

void validate_assignment(const std::vector<std::int64_t>& ids, std::int64_t pool_size) {
    std::unordered_set<std::int64_t> seen;
    for (auto id : ids) {
        if (id < 0 || id >= pool_size)
            throw PoolError("identifier " + std::to_string(id) + " outside pool of size " +
                            std::to_string(pool_size));
        if (!seen.insert(id).second)
            throw PoolError("duplicate identifier " + std::to_string(id) + " in assignment");
    }
}

ad::Value embed_assignment(const ad::Value& table, const std::vector<std::int64_t>& ids) {
    if (table->val.rank() != 2) throw ShapeError("embedding table must be rank 2");
    validate_assignment(ids, table->val.shape[0]);
    return ad::embed(table, ids);
}

} // namespace latflow::ids
