#pragma once

namespace mffd::detail {

/// Mirror index without repeating the edge sample (d c b | a b c d | c b a),
/// folded until it lands inside [0, n).
inline long reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace mffd::detail
