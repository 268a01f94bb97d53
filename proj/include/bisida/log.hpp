#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace bisida {

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink()
{
    static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}

inline void warn(const std::string& msg)
{
    if (warning_sink()) warning_sink()(msg);
}

}  // namespace bisida
