/*
 * Copyright 2026 prpl Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace prpl {

// splitmix64 finalizer; used to derive independent named sub-streams from
// one master seed so toggling one randomized component does not shift the
// streams of the others.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    return mix64(master ^ h);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name, std::uint64_t index) {
    return mix64(stream_seed(master, name) ^ mix64(index));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view name) {
    return std::mt19937_64(stream_seed(master, name));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view name, std::uint64_t index) {
    return std::mt19937_64(stream_seed(master, name, index));
}

}  // namespace prpl
