#pragma once

#include "patchforge/minilang/ast.hpp"
#include "patchforge/minilang/lexer.hpp"
#include "patchforge/minilang/parser.hpp"
#include "patchforge/minilang/printer.hpp"
#include "patchforge/minilang/vocab.hpp"
