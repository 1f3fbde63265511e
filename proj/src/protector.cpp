#include "xom/protector.hpp"

#include "xom/error.hpp"
#include "xom/x86_decode.hpp"

namespace xom {

RefCounts count_static_refs(const BinaryImage &image, const DisassemblyReport &report)
{
    RefCounts counts;
    for (const auto &block : report.superset) counts[block] = 0;
    for (const auto &insn : instructions_in(image, report.code)) {
        std::optional<Address> target = insn.rip_relative_data_target;
        if (!target) target = insn.absolute_data_target;
        if (!target) continue;
        if (auto block = report.superset.find(*target)) ++counts[*block];
    }
    return counts;
}

XomLists build_lists(const DisassemblyReport &report, const RefCounts &refs)
{
    XomLists lists;
    for (const auto &block : report.superset) {
        auto it = refs.find(block);
        if (it == refs.end()) {
            throw Error(ErrorKind::InvariantViolation, "no reference count for block " + to_string(block));
        }
        EmbeddedDataBlock b{block, it->second, 0};
        (it->second > kStaticRefThreshold ? lists.optimization : lists.regular).push_back(b);
    }
    return lists;
}

ProtectResult protect(std::span<const std::uint8_t> input)
{
    const auto image = load_elf(input);
    if (image.find_section(kXomSectionName) != nullptr) {
        throw Error(ErrorKind::SectionExists, "input is already protected");
    }
    ProtectResult r;
    r.report = compute_superset(image);
    r.lists = build_lists(r.report, count_static_refs(image, r.report));
    r.bytes = attach_xom_section(set_xom_flag(image), r.lists).bytes();
    return r;
}

std::vector<std::uint8_t> protect_binary(std::span<const std::uint8_t> input)
{
    return protect(input).bytes;
}

} // namespace xom
