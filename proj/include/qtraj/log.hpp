#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

namespace qtraj::log {

using Sink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& mutex() {
    static std::mutex m;
    return m;
}
inline Sink& sink() {
    static Sink s = [](const std::string& msg) { std::clog << "qtraj: warning: " << msg << '\n'; };
    return s;
}
}  // namespace detail

/// Replaces the warning sink; returns the previous one.
inline Sink set_sink(Sink s) {
    std::lock_guard lock(detail::mutex());
    Sink old = std::move(detail::sink());
    detail::sink() = std::move(s);
    return old;
}

inline void warn(const std::string& msg) {
    std::lock_guard lock(detail::mutex());
    if (detail::sink()) detail::sink()(msg);
}

}  // namespace qtraj::log
