"""Integration tests package."""







