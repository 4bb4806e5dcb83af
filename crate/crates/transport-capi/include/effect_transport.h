#ifndef EFFECT_TRANSPORT_H
#define EFFECT_TRANSPORT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#endif  /* EFFECT_TRANSPORT_H */
