#pragma once

// Umbrella header.

#include "ratgan/config.hpp"
#include "ratgan/discriminator.hpp"
#include "ratgan/encoders.hpp"
#include "ratgan/evaluation.hpp"
#include "ratgan/generator.hpp"
#include "ratgan/gradcheck.hpp"
#include "ratgan/objectives.hpp"
#include "ratgan/rat.hpp"
#include "ratgan/training.hpp"
