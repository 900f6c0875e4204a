#pragma once

#include <cstdint>

namespace stepsnet {

// Counts multiply-accumulate operations performed by matrix products while a
// scope is active. One MAC = one multiply + one add, the unit the analytical
// cost model is stated in. Only matmul-family ops count; normalization,
// softmax, bias adds and residual adds do not.

namespace detail {
inline std::uint64_t*& mac_counter_slot() {
    thread_local std::uint64_t* counter = nullptr;
    return counter;
}
}  // namespace detail

inline void count_macs(std::uint64_t n) {
    if (auto* c = detail::mac_counter_slot()) *c += n;
}

class MacCounterScope {
public:
    explicit MacCounterScope(std::uint64_t& counter)
        : prev_(detail::mac_counter_slot()) {
        detail::mac_counter_slot() = &counter;
    }
    ~MacCounterScope() { detail::mac_counter_slot() = prev_; }

    MacCounterScope(const MacCounterScope&) = delete;
    MacCounterScope& operator=(const MacCounterScope&) = delete;

private:
    std::uint64_t* prev_;
};

}  // namespace stepsnet
