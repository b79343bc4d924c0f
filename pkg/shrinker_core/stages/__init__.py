# Shrinker core - stage modules
