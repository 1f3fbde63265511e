// Hand-assembled executables shared by the unit and acceptance tests.
#pragma once

#include "support/oracles.hpp"

#include "xom/corpus.hpp"

namespace fixtures {

using xom::ByteInterval;

const xom::Address kText = xom::text_base_of_fixture();

struct RefFixture {
    std::vector<std::uint8_t> elf;
    ByteInterval a, b;
};

inline void put32(std::vector<std::uint8_t> &v, std::uint32_t x)
{
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

// refs_a references to block A and refs_b to block B, each one either
// `lea rax, [rip+d]` or `mov eax, [abs32]`, then:
//   jmp over ; A: 16 x D6 ; over: hlt ; B: 16 x D6
inline RefFixture ref_fixture(unsigned refs_a, unsigned refs_b, oracle::Rng &rng)
{
    const unsigned n = refs_a + refs_b;
    std::vector<bool> use_rip(n);
    for (unsigned i = 0; i < n; ++i) use_rip[i] = rng.coin();
    const xom::Address code_len = 7ull * n + 2;
    const xom::Address a = kText + code_len;
    const xom::Address over = a + 16;
    const xom::Address b = over + 1;

    std::vector<std::uint8_t> t;
    for (unsigned i = 0; i < n; ++i) {
        const xom::Address target = (i < refs_a ? a : b) + (i % 16);
        if (use_rip[i]) {
            t.insert(t.end(), {0x48, 0x8D, 0x05});
            put32(t, static_cast<std::uint32_t>(target - (kText + t.size() + 4)));
        } else {
            t.insert(t.end(), {0x8B, 0x04, 0x25});
            put32(t, static_cast<std::uint32_t>(target));
        }
    }
    t.insert(t.end(), {0xEB, 16});
    t.insert(t.end(), 16, 0xD6);
    t.push_back(0xF4);
    t.insert(t.end(), 16, 0xD6);
    return {xom::make_executable(t), {a, a + 16}, {b, b + 16}};
}

struct GadgetFixture {
    std::vector<std::uint8_t> elf;
    ByteInterval data;
    std::vector<xom::Address> planted; // starts of the planted 58 C3, C3 and 0F 01 EF
};

// xor eax, eax ; wrpkru ; jmp over ; <token data with planted sequences> ; over: hlt
inline GadgetFixture gadget_fixture(oracle::Rng &rng, std::size_t tokens)
{
    static const std::vector<std::vector<std::uint8_t>> planted = {{0x58, 0xC3}, {0xC3}, {0x0F, 0x01, 0xEF}};
    std::vector<std::vector<std::uint8_t>> seq;
    for (std::size_t i = 0; i < tokens; ++i) seq.push_back(rng.choice(oracle::gadget_tokens()));
    std::vector<std::size_t> marks;
    for (const auto &p : planted) {
        const auto at = rng.between(0, seq.size());
        seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(at), p);
        for (auto &m : marks) m += m >= at;
        marks.push_back(at);
    }

    std::vector<std::uint8_t> data;
    std::vector<std::size_t> offsets;
    for (const auto &t : seq) {
        offsets.push_back(data.size());
        data.insert(data.end(), t.begin(), t.end());
    }
    std::vector<std::uint8_t> t = {0x31, 0xC0, 0x0F, 0x01, 0xEF, 0xE9};
    put32(t, static_cast<std::uint32_t>(data.size()));
    const xom::Address data_start = kText + t.size();
    t.insert(t.end(), data.begin(), data.end());
    t.push_back(0xF4);

    GadgetFixture f{xom::make_executable(t), {data_start, data_start + data.size()}, {}};
    for (auto m : marks) f.planted.push_back(data_start + offsets[m]);
    return f;
}

} // namespace fixtures
