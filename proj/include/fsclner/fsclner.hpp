#pragma once

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/continual.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"
#include "fsclner/evaluate.hpp"
#include "fsclner/json_io.hpp"
#include "fsclner/model.hpp"
#include "fsclner/objectives.hpp"
#include "fsclner/optim.hpp"
#include "fsclner/prompting.hpp"
#include "fsclner/rng.hpp"
#include "fsclner/synthetic.hpp"
#include "fsclner/tokenizer.hpp"
